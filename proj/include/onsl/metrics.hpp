#pragma once

// Divergences between Gaussian laws, sample-based estimators and log-log
// rate fitting.

#include "onsl/distributions.hpp"
#include "onsl/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace onsl {

// KL(P || Q) in nats.
double kl_gaussian(const GaussianLaw& P, const GaussianLaw& Q);

// KL between N(e^{-h} x, (1 - e^{-2h}) I) and N(e^{-h} x_hat, (1 - e^{-2h}) I).
double kl_conditional_same_cov(const Vector& x, const Vector& x_hat, double h);

// 2-Wasserstein distance (Bures form).
double w2_gaussian(const GaussianLaw& P, const GaussianLaw& Q);

/// Sample mean and unbiased covariance of the rows of `points`.
/// Throws InvalidArgument when n < d + 2 or the covariance is rank deficient.
GaussianLaw empirical_gaussian_fit(const RowMatrix& points, unsigned workers = 1);

struct KnnOptions {
    std::size_t bootstrap = 200;
    std::uint64_t seed = 0;
    double confidence = 0.95;
};

struct KnnKlResult {
    double estimate = 0.0;
    double std_error = 0.0;  // bootstrap
    double ci_low = 0.0;
    double ci_high = 0.0;
    int k = 1;
    bool jittered = false;  // zero distances were found and both batches were jittered
    double jitter_scale = 0.0;
};

/// k-nearest-neighbour estimate of KL(P || Q) from samples (Wang, Kulkarni and
/// Verdu form). Biased at finite n; the bootstrap resamples the per-point
/// log distance ratios.
KnnKlResult knn_kl_estimate(const RowMatrix& samples_p, const RowMatrix& samples_q, int k,
                            const KnnOptions& opts = {});

struct RatePoint {
    std::size_t K = 0;
    double value = 0.0;
    int d = 0;
    double c = 0.0;
    double eps_score = 0.0;
    std::uint64_t seed = 0;
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

/// Least squares on (ln x, ln y). Requires >= 3 points with y > 0.
RateFit fit_log_log(std::span<const double> x, std::span<const double> y);

/// fit_log_log over (K, value). Throws InvalidArgument naming the first
/// nonpositive value.
RateFit fit_rate_exponent(std::span<const RatePoint> points);

/// Least squares y = a + b x.
RateFit fit_line(std::span<const double> x, std::span<const double> y);

/// Least squares y = b x. r_squared is the centred coefficient
/// 1 - SS_res / sum (y - mean y)^2.
RateFit fit_through_origin(std::span<const double> x, std::span<const double> y);

}  // namespace onsl
