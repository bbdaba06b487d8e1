#pragma once

// Time-indexed score fields: exact scores of analytic data laws in x-space
// (s = grad log p_t) or z-space (s_r = grad log q_t), controlled
// perturbations of them, and the step-weighted score-error functional.

#include "onsl/distributions.hpp"
#include "onsl/mixture.hpp"
#include "onsl/process.hpp"
#include "onsl/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace onsl {

enum class Space { x, z };

// s(x) = A x + b at a fixed time.
struct AffineMap {
    Matrix A;
    Vector b;
};

/// A score field frozen at one time. Evaluation is const and thread-safe;
/// scratch lives in the caller's ScoreEval.
class ScoreSlice {
public:
    virtual ~ScoreSlice() = default;

    virtual int dim() const = 0;
    virtual bool has_derivatives() const { return false; }
    // Fills out.score, plus out.jacobian / out.laplacian as requested.
    // Throws ContractError when derivatives are requested but unsupported.
    virtual void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const = 0;
    virtual std::optional<AffineMap> affine() const { return std::nullopt; }

    Vector score(const Vector& x) const;
};

class ScoreField {
public:
    virtual ~ScoreField() = default;

    virtual int dim() const = 0;
    virtual Space space() const = 0;
    virtual bool has_derivatives() const = 0;
    virtual std::unique_ptr<const ScoreSlice> at(double t) const = 0;
    // Stable textual description, part of config hashes.
    virtual std::string describe() const = 0;

    Vector score(double t, const Vector& x) const;
    Matrix jacobian(double t, const Vector& x) const;
    Vector laplacian(double t, const Vector& x) const;
};

using ScoreFieldPtr = std::shared_ptr<const ScoreField>;

/// Exact score of a Gaussian mixture or finite support, evaluated from the
/// analytic marginal at each time.
class ExactScore final : public ScoreField {
public:
    ExactScore(DataLaw law, Space space);

    int dim() const override { return onsl::dim(law_); }
    Space space() const override { return space_; }
    bool has_derivatives() const override { return true; }
    std::unique_ptr<const ScoreSlice> at(double t) const override;
    std::string describe() const override;

    const DataLaw& law() const noexcept { return law_; }

private:
    DataLaw law_;
    Space space_;
};

ScoreFieldPtr make_exact_score(const DataLaw& law, Space space = Space::x);

enum class PerturbMode { constant_bias, random_fourier_bias, relative_scaling };

PerturbMode perturb_mode_from_string(const std::string& s);
std::string to_string(PerturbMode m);

/// s_hat = s + perturbation, calibrated so that the weighted error
/// (1/T) sum_k h_k E_{p_{t_k}} |s_hat - s|^2 equals target_eps^2.
class PerturbedScore final : public ScoreField {
public:
    struct FourierTerm {
        Vector direction;
        Vector frequency;
        double phase;
    };

    int dim() const override { return base_->dim(); }
    Space space() const override { return base_->space(); }
    bool has_derivatives() const override;
    std::unique_ptr<const ScoreSlice> at(double t) const override;
    std::string describe() const override;

    const ScoreFieldPtr& base() const noexcept { return base_; }
    PerturbMode mode() const noexcept { return mode_; }
    double target_eps() const noexcept { return target_eps_; }
    // Constant-bias vector b (zero for other modes).
    const Vector& bias() const noexcept { return bias_; }
    // Relative-scaling gamma (s_hat = (1 + gamma) s).
    double gamma() const noexcept { return gamma_; }
    double fourier_amplitude() const noexcept { return amplitude_; }
    const std::vector<FourierTerm>& fourier_terms() const noexcept { return fourier_; }

private:
    friend std::shared_ptr<const PerturbedScore> perturb_score(ScoreFieldPtr, PerturbMode, double, const TimeGrid&,
                                                               std::uint64_t, const DataLaw*, std::size_t);
    PerturbedScore(ScoreFieldPtr base, PerturbMode mode, double target_eps);

    ScoreFieldPtr base_;
    PerturbMode mode_;
    double target_eps_;
    Vector bias_;
    double gamma_ = 0.0;
    double amplitude_ = 0.0;
    std::vector<FourierTerm> fourier_;
};

/// Builds s_hat from `base`. Constant bias is calibrated in closed form
/// (|b|^2 = eps^2 T / (T - t_0)); relative scaling and the random Fourier bias
/// are calibrated by Monte Carlo under p_data (required for those modes).
std::shared_ptr<const PerturbedScore> perturb_score(ScoreFieldPtr base, PerturbMode mode, double target_eps,
                                                    const TimeGrid& grid, std::uint64_t seed,
                                                    const DataLaw* p_data = nullptr,
                                                    std::size_t calibration_mc = 4000);

/// z-space score of a finite support via the posterior form
/// E_{y|z}[(y - z)] / (e^{2t} - 1).
Vector posterior_score_discrete(const DiscreteSupport& data, double t, const Vector& z);

struct ScoreErrorEstimate {
    double value = 0.0;      // estimated eps^2
    double std_error = 0.0;  // Monte Carlo standard error of value
};

/// Monte Carlo estimate of (1/T) sum_{k=1}^{K+1} h_k E_{x ~ p_{t_k}} |s_hat - s|^2
/// with x drawn through the forward process. Fields must be x-space.
ScoreErrorEstimate measure_score_error(const TimeGrid& grid, const ScoreField& s, const ScoreField& s_hat,
                                       const DataLaw& p_data, std::size_t n_mc, std::uint64_t seed,
                                       unsigned workers = 1);

}  // namespace onsl
