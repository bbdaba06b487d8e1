#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace onsl {

// Runs fn(begin, end) over [0, n) split into `workers` contiguous chunks.
// Callers must write only to per-index slots so the result is independent of
// the chunking.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    const std::size_t lanes = std::clamp<std::size_t>(workers, 1, n);
    if (lanes == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(lanes);
    const std::size_t chunk = (n + lanes - 1) / lanes;
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        const std::size_t begin = lane * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Pairwise summation with a fixed split order.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 64) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

// Mean and standard error of per-sample values, deterministic reduction order.
inline MeanEstimate mean_and_error(std::span<const double> v) {
    MeanEstimate est;
    if (v.empty()) return est;
    const double n = static_cast<double>(v.size());
    est.mean = pairwise_sum(v) / n;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - est.mean;
        sq[i] = d * d;
    }
    if (v.size() > 1) est.std_error = std::sqrt(pairwise_sum(sq) / (n - 1.0) / n);
    return est;
}

}  // namespace onsl
