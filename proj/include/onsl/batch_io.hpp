#pragma once

// SampleBatch persistence. CSV: two '#' header lines carrying t_1 and the
// config hash, a column header x0..x{d-1}, one row per sample (%.17g).
// Binary: "ONSL", u16 version (1), u32 d, u64 n, then n*d little-endian f64
// in row-major order.

#include "onsl/sampler.hpp"

#include <filesystem>

namespace onsl {

void write_batch_csv(const std::filesystem::path& path, const SampleBatch& batch);
SampleBatch read_batch_csv(const std::filesystem::path& path);

void write_batch_binary(const std::filesystem::path& path, const SampleBatch& batch);
// The binary format stores no time or hash; at_time is NaN and config_hash 0.
SampleBatch read_batch_binary(const std::filesystem::path& path);

}  // namespace onsl
