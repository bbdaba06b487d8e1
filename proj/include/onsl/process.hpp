#pragma once

// Forward Ornstein-Uhlenbeck process dx = -x dt + sqrt(2) dw, its rescaled
// form z(t) = e^t x(t), and the two-regime time grids used by the samplers.

#include "onsl/types.hpp"

#include <json.hpp>

#include <cstddef>
#include <vector>

namespace onsl {

struct IndexRange {
    std::size_t first;
    std::size_t last;  // inclusive
};

/// Discretization delta = t_0 < t_1 < ... < t_{K+1} = T with
/// h_k = c * min(1, t_k). Above t = 1 the steps are uniform (size c, the last
/// one shrunk to land on 1); below 1 they are geometric, t_{k-1} = (1-c) t_k,
/// and the last geometric point is clamped to delta.
class TimeGrid {
public:
    TimeGrid(double delta, double horizon, double c, std::vector<double> times, std::size_t one_index);

    double delta() const noexcept { return delta_; }
    double horizon() const noexcept { return horizon_; }
    double c() const noexcept { return c_; }
    std::size_t K() const noexcept { return times_.size() - 2; }
    std::size_t num_steps() const noexcept { return times_.size() - 1; }
    // Index M with t_M = 1 (0 when delta >= 1 is impossible, so M >= 1 always).
    std::size_t one_index() const noexcept { return one_index_; }

    const std::vector<double>& times() const noexcept { return times_; }
    double t(std::size_t k) const { return times_.at(k); }
    // h_k = t_k - t_{k-1}, k = 1..K+1.
    double h(std::size_t k) const;
    std::vector<double> steps() const;

    // Steps weighted in the score-error functional: k = 1..K+1.
    IndexRange score_error_range() const noexcept { return {1, K() + 1}; }
    // Conditional-KL terms of the chain rule: k = 2..K+1.
    IndexRange kl_range() const noexcept { return {2, K() + 1}; }

    nlohmann::json to_json() const;
    static TimeGrid from_json(const nlohmann::json& j);

private:
    double delta_;
    double horizon_;
    double c_;
    std::vector<double> times_;
    std::size_t one_index_;
};

TimeGrid build_time_grid(double delta, double horizon, double c);

struct GridSolution {
    double c;
    TimeGrid grid;
    bool at_boundary;  // solved c sits against the c < 1/2 limit
};

/// Solves for the ratio c such that build_time_grid has exactly K+1 steps.
GridSolution grid_from_iterations(double delta, double horizon, std::size_t K);

/// Number of steps build_time_grid(delta, horizon, c) would produce, capped
/// at `limit + 1` so very small c stays cheap.
std::size_t count_grid_steps(double delta, double horizon, double c, std::size_t limit);

struct ForwardCoeffs {
    double scale;      // e^{-t}
    double noise_std;  // sqrt(1 - e^{-2t})
};

ForwardCoeffs forward_coeffs(double t);

// e^{-t} y + sqrt(1 - e^{-2t}) noise
Vector forward_sample(const Vector& y, double t, const Vector& noise);

Vector rescale_to_z(const Vector& x, double t);
Vector rescale_to_x(const Vector& z, double t);

}  // namespace onsl
