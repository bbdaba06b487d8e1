#include "onsl/process.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace onsl {
namespace {

// Relative slack for "lands exactly on" decisions in the grid construction.
constexpr double kLandingSlack = 1e-9;

void check_grid_args(double delta, double horizon, double c) {
    if (!(delta > 0.0) || !(delta < 1.0)) throw GridError("delta must lie in (0, 1)");
    if (!(horizon >= 1.0)) throw GridError("horizon T must be >= 1");
    if (!(c > 0.0) || !(c < 0.5)) throw GridError("step ratio c must lie in (0, 1/2)");
}

std::size_t uniform_step_count(double horizon, double c) {
    if (horizon <= 1.0) return 0;
    return static_cast<std::size_t>(std::ceil((horizon - 1.0) / c - kLandingSlack));
}

}  // namespace

TimeGrid::TimeGrid(double delta, double horizon, double c, std::vector<double> times, std::size_t one_index)
    : delta_(delta), horizon_(horizon), c_(c), times_(std::move(times)), one_index_(one_index) {
    if (times_.size() < 2) throw GridError("time grid needs at least two points");
    for (std::size_t k = 1; k < times_.size(); ++k) {
        if (!(times_[k] > times_[k - 1])) throw GridError("time grid must be strictly increasing");
    }
}

double TimeGrid::h(std::size_t k) const {
    if (k == 0 || k >= times_.size()) throw InvalidArgument("step index out of range");
    return times_[k] - times_[k - 1];
}

std::vector<double> TimeGrid::steps() const {
    std::vector<double> out(num_steps());
    for (std::size_t k = 1; k < times_.size(); ++k) out[k - 1] = times_[k] - times_[k - 1];
    return out;
}

nlohmann::json TimeGrid::to_json() const {
    return {{"delta", delta_}, {"T", horizon_}, {"c", c_}, {"K", K()}, {"times", times_}};
}

TimeGrid TimeGrid::from_json(const nlohmann::json& j) {
    const auto times = j.at("times").get<std::vector<double>>();
    std::size_t one = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::abs(times[k] - 1.0) < 1e-12) one = k;
    }
    TimeGrid g(j.at("delta").get<double>(), j.at("T").get<double>(), j.at("c").get<double>(), times, one);
    if (j.contains("K") && j.at("K").get<std::size_t>() != g.K()) throw ConfigError("grid K does not match times");
    return g;
}

TimeGrid build_time_grid(double delta, double horizon, double c) {
    check_grid_args(delta, horizon, c);
    std::vector<double> rev{horizon};
    const std::size_t n_uniform = uniform_step_count(horizon, c);
    for (std::size_t j = 1; j < n_uniform; ++j) rev.push_back(horizon - static_cast<double>(j) * c);
    if (horizon > 1.0) rev.push_back(1.0);
    const std::size_t one_from_top = rev.size() - 1;
    double t = 1.0;
    for (;;) {
        const double next = t * (1.0 - c);
        if (next <= delta * (1.0 + kLandingSlack)) {
            rev.push_back(delta);
            break;
        }
        rev.push_back(next);
        t = next;
    }
    std::vector<double> times(rev.rbegin(), rev.rend());
    const std::size_t one_index = times.size() - 1 - one_from_top;
    return TimeGrid(delta, horizon, c, std::move(times), one_index);
}

std::size_t count_grid_steps(double delta, double horizon, double c, std::size_t limit) {
    check_grid_args(delta, horizon, c);
    const double n_uniform_real = std::ceil((horizon - 1.0) / c - kLandingSlack);
    if (horizon > 1.0 && n_uniform_real > static_cast<double>(limit)) return limit + 1;
    std::size_t steps = uniform_step_count(horizon, c);
    double t = 1.0;
    for (;;) {
        ++steps;
        if (steps > limit) return limit + 1;
        const double next = t * (1.0 - c);
        if (next <= delta * (1.0 + kLandingSlack)) break;
        t = next;
    }
    return steps;
}

GridSolution grid_from_iterations(double delta, double horizon, std::size_t K) {
    check_grid_args(delta, horizon, 0.25);
    const std::size_t target = K + 1;
    const std::size_t limit = target + 2;
    double hi = std::nextafter(0.5, 0.0);
    if (count_grid_steps(delta, horizon, hi, limit) > target) {
        std::ostringstream msg;
        msg << "K = " << K << " is too small for delta = " << delta << ", T = " << horizon
            << ": even c -> 1/2 needs " << count_grid_steps(delta, horizon, hi, 1u << 30) - 1
            << " iterations; raise K";
        throw GridError(msg.str());
    }
    double lo = 0.0;  // step count is unbounded as c -> 0
    for (int iter = 0; iter < 200 && hi - lo > std::numeric_limits<double>::epsilon() * hi; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= 0.0) break;
        if (count_grid_steps(delta, horizon, mid, limit) <= target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    const std::size_t got = count_grid_steps(delta, horizon, hi, limit);
    if (got != target) {
        std::ostringstream msg;
        msg << "no c in (0, 1/2) gives exactly K = " << K << " iterations (both grid regimes change "
            << "at c = " << hi << "); try K - 1 or K + 1";
        throw GridError(msg.str());
    }
    TimeGrid grid = build_time_grid(delta, horizon, hi);
    return GridSolution{hi, std::move(grid), hi > 0.5 - 1e-6};
}

ForwardCoeffs forward_coeffs(double t) {
    if (t < 0.0) throw InvalidArgument("forward_coeffs: t must be >= 0");
    return {std::exp(-t), std::sqrt(-std::expm1(-2.0 * t))};
}

Vector forward_sample(const Vector& y, double t, const Vector& noise) {
    if (y.size() != noise.size()) throw InvalidArgument("forward_sample: dimension mismatch between y and noise");
    const auto [scale, noise_std] = forward_coeffs(t);
    return scale * y + noise_std * noise;
}

Vector rescale_to_z(const Vector& x, double t) { return std::exp(t) * x; }

Vector rescale_to_x(const Vector& z, double t) { return std::exp(-t) * z; }

}  // namespace onsl
