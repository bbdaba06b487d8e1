#pragma once

// Batch samplers on a TimeGrid: the two-phase ODE-then-noise sampler, the
// exponential-integrator reverse-SDE baseline and the pure probability-flow
// ODE. All randomness comes from per-(sample, step) counter streams, so a
// batch depends only on the seed, never on the worker count.

#include "onsl/process.hpp"
#include "onsl/score_field.hpp"
#include "onsl/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace onsl {

enum class Variant { ode_noise, ei_sde, pf_ode };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct SamplerConfig {
    TimeGrid grid;
    ScoreFieldPtr score;  // x-space estimate s_hat
    std::size_t n_samples = 1;
    std::uint64_t seed = 0;
    Variant variant = Variant::ode_noise;
    unsigned workers = 1;  // not part of the hash; output is independent of it
};

// Throws InvalidArgument on n_samples == 0, K < 2, missing or z-space score.
void validate(const SamplerConfig& cfg);

// FNV-1a over the grid times, score description, n_samples, seed and variant.
std::uint64_t config_hash(const SamplerConfig& cfg);

struct SampleBatch {
    RowMatrix points;  // n_samples x d
    double at_time = 0.0;
    std::uint64_t config_hash = 0;
};

/// One step of the two-phase sampler from t_k: an exponential-integrator ODE
/// half over h_k + h_{k-1} (landing at t_{k-2}) followed by forward noising
/// over h_{k-1} (back to t_{k-1}). Requires 2 <= k <= K+1.
Vector ode_noise_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat,
                      const Vector& noise);

// x_{k-1} = e^{h} x + 2 (e^{h} - 1) s_hat + sqrt(e^{2h} - 1) noise, h = h_k.
Vector ei_sde_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat,
                   const Vector& noise);

// x_{k-1} = e^{h} x + (e^{h} - 1) s_hat, h = h_k.
Vector pf_ode_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat);

// Times visited by the two-phase sampler at step k.
struct StepTimes {
    std::size_t k;
    double start;       // t_k
    double ode_target;  // t_{k-2} = t_k - (h_k + h_{k-1})
    double noise_end;   // t_{k-1} = ode_target + h_{k-1}
};
std::vector<StepTimes> algorithm1_schedule(const TimeGrid& grid);

SampleBatch run_algorithm1(const SamplerConfig& cfg);
SampleBatch run_ei_sde_baseline(const SamplerConfig& cfg);
SampleBatch run_pf_ode(const SamplerConfig& cfg);
SampleBatch run_sampler(const SamplerConfig& cfg);

}  // namespace onsl
