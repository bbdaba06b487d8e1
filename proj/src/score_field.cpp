#include "onsl/score_field.hpp"

#include "onsl/parallel.hpp"
#include "onsl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace onsl {
namespace {

constexpr std::size_t kFourierTerms = 16;
constexpr std::uint64_t kBiasStream = 0xB1A5ULL;
constexpr std::uint64_t kFourierStream = 0xF0C1ULL;
constexpr std::uint64_t kCalibrationStream = 0xCA1BULL;

class MixtureSlice final : public ScoreSlice {
public:
    explicit MixtureSlice(ComponentSet cs) : cs_(std::move(cs)) {}

    int dim() const override { return cs_.dim(); }
    bool has_derivatives() const override { return true; }
    void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const override { cs_.evaluate(x, level, out); }
    std::optional<AffineMap> affine() const override {
        if (cs_.size() != 1) return std::nullopt;
        const Matrix& P = cs_.precisions().front();
        return AffineMap{-P, P * cs_.means().front()};
    }

private:
    ComponentSet cs_;
};

class PerturbedSlice final : public ScoreSlice {
public:
    PerturbedSlice(std::unique_ptr<const ScoreSlice> base, const PerturbedScore& owner)
        : base_(std::move(base)), owner_(owner) {}

    int dim() const override { return base_->dim(); }
    bool has_derivatives() const override { return base_->has_derivatives(); }

    void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const override {
        base_->evaluate(x, level, out);
        switch (owner_.mode()) {
            case PerturbMode::constant_bias:
                out.score += owner_.bias();
                break;
            case PerturbMode::relative_scaling: {
                const double f = 1.0 + owner_.gamma();
                out.score *= f;
                if (level != DerivLevel::score) out.jacobian *= f;
                if (level == DerivLevel::laplacian) out.laplacian *= f;
                break;
            }
            case PerturbMode::random_fourier_bias:
                add_fourier(x, level, out);
                break;
        }
    }

    std::optional<AffineMap> affine() const override {
        auto base = base_->affine();
        if (!base) return std::nullopt;
        switch (owner_.mode()) {
            case PerturbMode::constant_bias:
                base->b += owner_.bias();
                return base;
            case PerturbMode::relative_scaling:
                base->A *= 1.0 + owner_.gamma();
                base->b *= 1.0 + owner_.gamma();
                return base;
            case PerturbMode::random_fourier_bias:
                if (owner_.fourier_amplitude() == 0.0) return base;
                return std::nullopt;
        }
        return std::nullopt;
    }

private:
    void add_fourier(const Vector& x, DerivLevel level, ScoreEval& out) const {
        const double a = owner_.fourier_amplitude();
        if (a == 0.0) return;
        for (const auto& term : owner_.fourier_terms()) {
            const double phase = term.frequency.dot(x) + term.phase;
            const double cs = std::cos(phase);
            out.score.noalias() += a * cs * term.direction;
            if (level != DerivLevel::score) {
                out.jacobian.noalias() -= a * std::sin(phase) * term.direction * term.frequency.transpose();
            }
            if (level == DerivLevel::laplacian) {
                out.laplacian.noalias() -= a * cs * term.frequency.squaredNorm() * term.direction;
            }
        }
    }

    std::unique_ptr<const ScoreSlice> base_;
    const PerturbedScore& owner_;
};

Vector random_unit(CounterRng& rng, int d) {
    Vector v(d);
    do {
        rng.fill_normal({v.data(), static_cast<std::size_t>(d)});
    } while (v.norm() == 0.0);
    return v / v.norm();
}

// (1/T) sum_k h_k E |u(t_k, x)|^2 for a unit-amplitude perturbation u, by
// Monte Carlo under the marginal of the field's space.
template <class Perturbation>
double weighted_mean_square(const TimeGrid& grid, const DataLaw& law, Space space, std::size_t n_mc,
                            std::uint64_t seed, Perturbation&& unit) {
    const DataSampler sampler(law);
    const auto [first, last] = grid.score_error_range();
    double total = 0.0;
    std::vector<double> vals(n_mc);
    Vector y, noise(sampler.dim()), x;
    ScoreEval ev;
    for (std::size_t k = first; k <= last; ++k) {
        const double t = grid.t(k);
        auto slice_ptr = unit(t);
        for (std::size_t i = 0; i < n_mc; ++i) {
            CounterRng rng(seed, i, k);
            sampler.draw(rng, y);
            rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
            x = forward_sample(y, t, noise);
            if (space == Space::z) x *= std::exp(t);
            vals[i] = slice_ptr(x, ev);
        }
        total += grid.h(k) * pairwise_sum(vals) / static_cast<double>(n_mc);
    }
    return total / grid.horizon();
}

}  // namespace

Vector ScoreSlice::score(const Vector& x) const {
    ScoreEval ev;
    evaluate(x, DerivLevel::score, ev);
    return ev.score;
}

Vector ScoreField::score(double t, const Vector& x) const { return at(t)->score(x); }

Matrix ScoreField::jacobian(double t, const Vector& x) const {
    if (!has_derivatives()) throw ContractError("score field has no Jacobian capability");
    ScoreEval ev;
    at(t)->evaluate(x, DerivLevel::jacobian, ev);
    return ev.jacobian;
}

Vector ScoreField::laplacian(double t, const Vector& x) const {
    if (!has_derivatives()) throw ContractError("score field has no Laplacian capability");
    ScoreEval ev;
    at(t)->evaluate(x, DerivLevel::laplacian, ev);
    return ev.laplacian;
}

ExactScore::ExactScore(DataLaw law, Space space) : law_(std::move(law)), space_(space) {}

std::unique_ptr<const ScoreSlice> ExactScore::at(double t) const {
    return std::make_unique<MixtureSlice>(space_ == Space::x ? x_marginal_components(law_, t)
                                                             : z_marginal_components(law_, t));
}

std::string ExactScore::describe() const {
    return std::string("exact[") + (space_ == Space::x ? "x" : "z") + "]" + data_law_to_json(law_).dump();
}

ScoreFieldPtr make_exact_score(const DataLaw& law, Space space) { return std::make_shared<ExactScore>(law, space); }

PerturbMode perturb_mode_from_string(const std::string& s) {
    if (s == "constant-bias") return PerturbMode::constant_bias;
    if (s == "random-fourier-bias") return PerturbMode::random_fourier_bias;
    if (s == "relative-scaling") return PerturbMode::relative_scaling;
    throw InvalidArgument("unsupported perturbation mode: " + s);
}

std::string to_string(PerturbMode m) {
    switch (m) {
        case PerturbMode::constant_bias: return "constant-bias";
        case PerturbMode::random_fourier_bias: return "random-fourier-bias";
        case PerturbMode::relative_scaling: return "relative-scaling";
    }
    return "?";
}

PerturbedScore::PerturbedScore(ScoreFieldPtr base, PerturbMode mode, double target_eps)
    : base_(std::move(base)), mode_(mode), target_eps_(target_eps), bias_(Vector::Zero(base_->dim())) {}

bool PerturbedScore::has_derivatives() const { return base_->has_derivatives(); }

std::unique_ptr<const ScoreSlice> PerturbedScore::at(double t) const {
    return std::make_unique<PerturbedSlice>(base_->at(t), *this);
}

std::string PerturbedScore::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "perturbed[" << to_string(mode_) << ",eps=" << target_eps_ << ",gamma=" << gamma_ << ",amp=" << amplitude_
       << ",bias=";
    for (Eigen::Index i = 0; i < bias_.size(); ++i) os << (i ? ";" : "") << bias_(i);
    os << ",terms=" << fourier_.size() << "](" << base_->describe() << ")";
    return os.str();
}

std::shared_ptr<const PerturbedScore> perturb_score(ScoreFieldPtr base, PerturbMode mode, double target_eps,
                                                    const TimeGrid& grid, std::uint64_t seed, const DataLaw* p_data,
                                                    std::size_t calibration_mc) {
    if (!base) throw InvalidArgument("perturb_score: null base field");
    if (!(target_eps >= 0.0)) throw InvalidArgument("perturb_score: target_eps must be >= 0");
    std::shared_ptr<PerturbedScore> out(new PerturbedScore(base, mode, target_eps));
    if (target_eps == 0.0) return out;
    const int d = base->dim();
    const double T = grid.horizon();
    const double eps2 = target_eps * target_eps;
    switch (mode) {
        case PerturbMode::constant_bias: {
            // Error is x-independent: |b|^2 (1/T) sum_k h_k = |b|^2 (T - t_0) / T.
            CounterRng rng(seed, kBiasStream);
            out->bias_ = std::sqrt(eps2 * T / (T - grid.t(0))) * random_unit(rng, d);
            break;
        }
        case PerturbMode::relative_scaling: {
            if (!p_data) throw InvalidArgument("relative-scaling calibration needs p_data");
            const double w = weighted_mean_square(
                grid, *p_data, base->space(), calibration_mc, stream_key(seed, kCalibrationStream), [&](double t) {
                    auto slice = std::shared_ptr<const ScoreSlice>(base->at(t));
                    return [slice](const Vector& x, ScoreEval& ev) {
                        slice->evaluate(x, DerivLevel::score, ev);
                        return ev.score.squaredNorm();
                    };
                });
            if (!(w > 0.0)) throw InvalidArgument("relative-scaling: base score has zero mean square");
            out->gamma_ = std::sqrt(eps2 / w);
            break;
        }
        case PerturbMode::random_fourier_bias: {
            if (!p_data) throw InvalidArgument("random-fourier-bias calibration needs p_data");
            CounterRng rng(seed, kFourierStream);
            for (std::size_t j = 0; j < kFourierTerms; ++j) {
                PerturbedScore::FourierTerm term{random_unit(rng, d), Vector(d), 0.0};
                rng.fill_normal({term.frequency.data(), static_cast<std::size_t>(d)});
                term.phase = 2.0 * std::numbers::pi * rng.uniform();
                out->fourier_.push_back(std::move(term));
            }
            const auto& terms = out->fourier_;
            const double w = weighted_mean_square(
                grid, *p_data, base->space(), calibration_mc, stream_key(seed, kCalibrationStream), [&](double) {
                    return [&terms](const Vector& x, ScoreEval&) {
                        Vector u = Vector::Zero(x.size());
                        for (const auto& term : terms) u += std::cos(term.frequency.dot(x) + term.phase) * term.direction;
                        return u.squaredNorm();
                    };
                });
            out->amplitude_ = std::sqrt(eps2 / w);
            break;
        }
    }
    return out;
}

Vector posterior_score_discrete(const DiscreteSupport& data, double t, const Vector& z) {
    const double var = std::expm1(2.0 * t);
    if (!(var > 0.0)) throw SingularScoreError("posterior score is singular at t = 0");
    if (z.size() != data.dim()) throw InvalidArgument("posterior_score_discrete: dimension mismatch");
    const auto n = data.size();
    std::vector<double> logits(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] = std::log(data.weights()[i]) - (z - data.atoms()[i]).squaredNorm() / (2.0 * var);
        mx = std::max(mx, logits[i]);
    }
    double norm = 0.0;
    Vector mean_y = Vector::Zero(z.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(logits[i] - mx);
        norm += w;
        mean_y += w * data.atoms()[i];
    }
    mean_y /= norm;
    return (mean_y - z) / var;
}

ScoreErrorEstimate measure_score_error(const TimeGrid& grid, const ScoreField& s, const ScoreField& s_hat,
                                       const DataLaw& p_data, std::size_t n_mc, std::uint64_t seed, unsigned workers) {
    if (s.dim() != s_hat.dim() || s.dim() != dim(p_data)) throw InvalidArgument("measure_score_error: dimension mismatch");
    if (s.space() != Space::x || s_hat.space() != Space::x)
        throw InvalidArgument("measure_score_error: fields must be x-space scores");
    if (n_mc < 2) throw InvalidArgument("measure_score_error: n_mc must be >= 2");
    const DataSampler sampler(p_data);
    const auto [first, last] = grid.score_error_range();
    const double T = grid.horizon();
    ScoreErrorEstimate est;
    double var_acc = 0.0;
    std::vector<double> vals(n_mc);
    for (std::size_t k = first; k <= last; ++k) {
        const double t = grid.t(k);
        const auto exact = s.at(t);
        const auto approx = s_hat.at(t);
        parallel_for(n_mc, workers, [&](std::size_t begin, std::size_t end) {
            Vector y, noise(sampler.dim()), x;
            ScoreEval ev_exact, ev_approx;
            for (std::size_t i = begin; i < end; ++i) {
                CounterRng rng(seed, i, k);
                sampler.draw(rng, y);
                rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
                x = forward_sample(y, t, noise);
                exact->evaluate(x, DerivLevel::score, ev_exact);
                approx->evaluate(x, DerivLevel::score, ev_approx);
                vals[i] = (ev_approx.score - ev_exact.score).squaredNorm();
            }
        });
        const auto m = mean_and_error(vals);
        const double w = grid.h(k) / T;
        est.value += w * m.mean;
        var_acc += w * w * m.std_error * m.std_error;
    }
    est.std_error = std::sqrt(var_acc);
    return est;
}

}  // namespace onsl
