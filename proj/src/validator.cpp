#include "onsl/validator.hpp"

#include "onsl/mixture.hpp"
#include "onsl/parallel.hpp"
#include "onsl/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace onsl {
namespace {

constexpr std::size_t kBlock = 4096;
constexpr double kClosedTol = 1e-8;
constexpr double kFpeMixtureTol = 1e-3;
constexpr std::uint64_t kPointStream = 0xF9E;

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct BlockMoments {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;
};

// Per-column mean and standard error of kernel(i, row, state) over i < n.
// Samples are reduced in fixed blocks of kBlock and the blocks are merged in
// order, so the result does not depend on the worker count.
template <class MakeState, class Kernel>
std::vector<MeanEstimate> mc_estimate(std::size_t n, std::size_t cols, unsigned workers, MakeState make_state,
                                      Kernel kernel) {
    const std::size_t nblocks = (n + kBlock - 1) / kBlock;
    std::vector<BlockMoments> stats(nblocks * cols);
    parallel_for(nblocks, workers, [&](std::size_t b0, std::size_t b1) {
        auto state = make_state();
        std::vector<double> buf(kBlock * cols), row(cols), dev(kBlock);
        for (std::size_t b = b0; b < b1; ++b) {
            const std::size_t i0 = b * kBlock;
            const std::size_t len = std::min(n, i0 + kBlock) - i0;
            for (std::size_t j = 0; j < len; ++j) {
                kernel(i0 + j, row.data(), state);
                for (std::size_t c = 0; c < cols; ++c) buf[c * kBlock + j] = row[c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
                const std::span<const double> col(buf.data() + c * kBlock, len);
                const double mean = pairwise_sum(col) / static_cast<double>(len);
                for (std::size_t j = 0; j < len; ++j) dev[j] = (col[j] - mean) * (col[j] - mean);
                stats[b * cols + c] = {static_cast<double>(len), mean, pairwise_sum({dev.data(), len})};
            }
        }
    });
    std::vector<MeanEstimate> out(cols);
    for (std::size_t c = 0; c < cols; ++c) {
        BlockMoments acc;
        for (std::size_t b = 0; b < nblocks; ++b) {
            const BlockMoments& s = stats[b * cols + c];
            const double total = acc.count + s.count;
            const double delta = s.mean - acc.mean;
            acc.mean += delta * s.count / total;
            acc.m2 += s.m2 + delta * delta * acc.count * s.count / total;
            acc.count = total;
        }
        out[c].mean = acc.mean;
        out[c].std_error = acc.count > 1.0 ? std::sqrt(acc.m2 / (acc.count - 1.0) / acc.count) : 0.0;
    }
    return out;
}

// Distance of a Monte Carlo mean from its closed form in standard errors. The
// relative floor covers columns that are deterministic up to rounding.
double sigmas(const MeanEstimate& est, double closed) {
    const double scale = est.std_error + 1e-12 * std::abs(closed);
    return scale > 0.0 ? std::abs(est.mean - closed) / scale : 0.0;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// Eigenvalues of the data covariance of a single-component law (zeros for a
// point mass). Closed forms below use C_t = Sigma + (e^{2t} - 1) I.
struct Spectrum {
    Vector lambda;
    Vector mean;
    Matrix basis;
};

std::optional<Spectrum> single_spectrum(const DataLaw& law) {
    if (num_components(law) != 1) return std::nullopt;
    const SingleGaussianView view = single_gaussian_view(law);
    Eigen::SelfAdjointEigenSolver<Matrix> es(view.cov);
    return Spectrum{es.eigenvalues().cwiseMax(0.0), view.mean, es.eigenvectors()};
}

// tr C_t^{-j}
double trace_inv_power(const Vector& lambda, double t, int j) {
    const double v = std::expm1(2.0 * t);
    double s = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) s += std::pow(lambda(i) + v, -j);
    return s;
}

// E|s_r|^m under q_t for a single Gaussian (s_r ~ N(0, C_t^{-1})).
double closed_moment(const Vector& lambda, double t, int m) {
    const double t1 = trace_inv_power(lambda, t, 1);
    if (m == 2) return t1;
    return t1 * t1 + 2.0 * trace_inv_power(lambda, t, 2);
}

// Right side of the generalized identity (already divided by e^{2t}).
double closed_generalized_rhs(const Vector& lambda, double t, int m) {
    if (m == 2) return -2.0 * trace_inv_power(lambda, t, 2);
    return -4.0 * trace_inv_power(lambda, t, 1) * trace_inv_power(lambda, t, 2) - 8.0 * trace_inv_power(lambda, t, 3);
}

// Central differences at dt, dt/2, dt/4 with two Richardson levels (error O(dt^6)).
template <class F>
double richardson_derivative(F f, double t, double dt) {
    const auto central = [&](double h) { return (f(t + h) - f(t - h)) / (2.0 * h); };
    const double d1 = central(dt), d2 = central(0.5 * dt), d4 = central(0.25 * dt);
    const double r1 = (4.0 * d2 - d1) / 3.0;
    const double r2 = (4.0 * d4 - d2) / 3.0;
    return (16.0 * r2 - r1) / 15.0;
}

struct ZSampler {
    DataSampler data;
    // z_t = y + sqrt(e^{2t} - 1) eta with (y, eta) from stream (seed, i).
    void draw(std::uint64_t seed, std::size_t i, Vector& y, Vector& eta) const {
        CounterRng rng(seed, i, 0x2);
        data.draw(rng, y);
        eta.resize(data.dim());
        rng.fill_normal({eta.data(), static_cast<std::size_t>(eta.size())});
    }
};

struct EvalState {
    Vector y, eta, z;
    ScoreEval ev;
};

struct IdentityMc {
    MeanEstimate deriv;     // d/dt E|s_r|^m
    MeanEstimate rhs;       // generalized right side
    MeanEstimate residual;  // e^{-2t} deriv - rhs, per sample
};

IdentityMc identity_mc(const DataLaw& law, double t, int m, double dt, const McSettings& mc) {
    const ZSampler zs{DataSampler(law)};
    const ComponentSet lo = z_marginal_components(law, t - dt);
    const ComponentSet mid = z_marginal_components(law, t);
    const ComponentSet hi = z_marginal_components(law, t + dt);
    const double sd_lo = std::sqrt(std::expm1(2.0 * (t - dt)));
    const double sd_mid = std::sqrt(std::expm1(2.0 * t));
    const double sd_hi = std::sqrt(std::expm1(2.0 * (t + dt)));
    const double scale = std::exp(-2.0 * t);
    const auto est = mc_estimate(
        mc.n_mc, 3, mc.workers, [] { return EvalState{}; },
        [&](std::size_t i, double* out, EvalState& st) {
            zs.draw(mc.seed, i, st.y, st.eta);
            st.z = st.y + sd_hi * st.eta;
            hi.evaluate(st.z, DerivLevel::score, st.ev);
            const double up = std::pow(st.ev.score.squaredNorm(), 0.5 * m);
            st.z = st.y + sd_lo * st.eta;
            lo.evaluate(st.z, DerivLevel::score, st.ev);
            const double down = std::pow(st.ev.score.squaredNorm(), 0.5 * m);
            st.z = st.y + sd_mid * st.eta;
            mid.evaluate(st.z, DerivLevel::jacobian, st.ev);
            const double s2 = st.ev.score.squaredNorm();
            const double j2 = st.ev.jacobian.squaredNorm();
            double rhs = -2.0 * j2;
            if (m == 4) rhs = -4.0 * s2 * j2 - 8.0 * (st.ev.jacobian * st.ev.score).squaredNorm();
            out[0] = (up - down) / (2.0 * dt);
            out[1] = rhs;
            out[2] = scale * out[0] - rhs;
        });
    return {est[0], est[1], est[2]};
}

// Shared core of the two identity checks. `time_scaled` reports the m = 2
// form d/dt E|s_r|^2 = -2 e^{2t} E|grad s_r|_F^2; otherwise the generalized
// form divided by e^{2t}. The relative residual is computed identically.
CheckReport identity_check(const std::string& name, const DataLaw& law, double t, int m, double dt,
                           const McSettings& mc, double mixture_tol, bool time_scaled) {
    Stopwatch sw;
    CheckReport rep;
    rep.name = name;
    rep.seed = mc.seed;
    if (m != 2 && m != 4) throw InvalidArgument("generalized identity supports m in {2, 4}");
    if (!(t > dt) || !(dt > 0.0)) throw InvalidArgument("identity checks need t > dt > 0");
    const double e2t = std::exp(2.0 * t);
    const double lhs_scale = time_scaled ? 1.0 : 1.0 / e2t;
    const double rhs_scale = time_scaled ? e2t : 1.0;
    if (const auto spec = single_spectrum(law)) {
        const double deriv = richardson_derivative([&](double u) { return closed_moment(spec->lambda, u, m); }, t, dt);
        const double rhs = closed_generalized_rhs(spec->lambda, t, m);
        const double lhs_v = lhs_scale * deriv;
        const double rhs_v = rhs_scale * rhs;
        rep.measure("lhs_closed", lhs_v);
        rep.measure("rhs_closed", rhs_v);
        rep.require_le("relative_residual_closed", std::abs(deriv / e2t - rhs) / std::abs(rhs), kClosedTol);
        if (mc.n_mc > 0) {
            const IdentityMc est = identity_mc(law, t, m, dt, mc);
            rep.measure("lhs_mc", lhs_scale * est.deriv.mean);
            rep.measure("rhs_mc", rhs_scale * est.rhs.mean);
            rep.require_le("lhs_mc_closed_sigmas", sigmas(est.deriv, deriv), 4.0);
            rep.require_le("rhs_mc_closed_sigmas", sigmas(est.rhs, rhs), 4.0);
        }
    } else {
        const IdentityMc est = identity_mc(law, t, m, dt, mc);
        rep.measure("lhs_mc", lhs_scale * est.deriv.mean);
        rep.measure("rhs_mc", rhs_scale * est.rhs.mean);
        rep.measure("residual_std_error", est.residual.std_error / std::abs(est.rhs.mean));
        rep.require_le("relative_residual_mc", std::abs(est.residual.mean) / std::abs(est.rhs.mean), mixture_tol);
    }
    rep.measure("n_mc", static_cast<double>(mc.n_mc));
    rep.measure("dt", dt);
    rep.wall_time_s = sw.seconds();
    return rep;
}

CheckReport fpe_on_field(const std::string& name, const ScoreField& field, double t,
                         const std::vector<Vector>& points, double dt, double tol) {
    Stopwatch sw;
    if (field.space() != Space::z) throw InvalidArgument("check_score_fpe needs a z-space score field");
    if (!field.has_derivatives()) throw ContractError("check_score_fpe needs Jacobian and Laplacian capability");
    if (!(t > dt) || !(dt > 0.0)) throw InvalidArgument("check_score_fpe needs t > dt > 0");
    CheckReport rep;
    rep.name = name;
    const auto s_mid = field.at(t);
    const auto s_p1 = field.at(t + dt), s_m1 = field.at(t - dt);
    const auto s_p2 = field.at(t + 0.5 * dt), s_m2 = field.at(t - 0.5 * dt);
    const double e2t = std::exp(2.0 * t);
    double max_diff = 0.0, max_rhs = 0.0;
    ScoreEval ev;
    for (const Vector& z : points) {
        const Vector coarse = (s_p1->score(z) - s_m1->score(z)) / (2.0 * dt);
        const Vector fine = (s_p2->score(z) - s_m2->score(z)) / dt;
        const Vector lhs = (4.0 * fine - coarse) / 3.0;
        s_mid->evaluate(z, DerivLevel::laplacian, ev);
        const Vector rhs = e2t * ev.laplacian + 2.0 * e2t * ev.jacobian.transpose() * ev.score;
        max_diff = std::max(max_diff, (lhs - rhs).cwiseAbs().maxCoeff());
        max_rhs = std::max(max_rhs, rhs.cwiseAbs().maxCoeff());
    }
    rep.measure("max_abs_residual", max_diff);
    rep.measure("max_abs_rhs", max_rhs);
    rep.measure("points", static_cast<double>(points.size()));
    rep.measure("dt", dt);
    rep.require_le("relative_residual", max_rhs > 0.0 ? max_diff / max_rhs : max_diff, tol);
    rep.wall_time_s = sw.seconds();
    return rep;
}

std::string law_tag(const std::string& law_name, int d, double t) {
    return "[" + law_name + ",d=" + std::to_string(d) + ",t=" + fmt(t) + "]";
}

}  // namespace

void CheckReport::require_le(const std::string& label, double value, double tol) {
    measure(label, value);
    tolerances.push_back({label, tol});
    if (!(value <= tol)) passed = false;
}

void CheckReport::require_in(const std::string& label, double value, double lo, double hi) {
    measure(label, value);
    tolerances.push_back({label + ".min", lo});
    tolerances.push_back({label + ".max", hi});
    if (!(value >= lo && value <= hi)) passed = false;
}

double CheckReport::value(const std::string& label) const {
    for (const auto& m : measured)
        if (m.label == label) return m.value;
    throw InvalidArgument("no measurement named " + label + " in " + name);
}

nlohmann::json CheckReport::to_json(bool with_timing) const {
    nlohmann::json j;
    j["name"] = name;
    j["status"] = passed ? "pass" : "fail";
    nlohmann::json m = nlohmann::json::array(), tol = nlohmann::json::array();
    for (const auto& x : measured) m.push_back({{"label", x.label}, {"value", x.value}});
    for (const auto& x : tolerances) tol.push_back({{"label", x.label}, {"value", x.value}});
    j["measured"] = m;
    j["tolerances"] = tol;
    j["seed"] = seed;
    if (!note.empty()) j["note"] = note;
    if (with_timing) j["wall_time_s"] = wall_time_s;
    return j;
}

std::string CheckReport::summary_line() const {
    std::ostringstream os;
    os << (passed ? "PASS " : "FAIL ") << name;
    for (std::size_t i = 0; i < tolerances.size(); ++i) {
        const auto& tol = tolerances[i];
        const auto dot = tol.label.rfind('.');
        const std::string base = dot == std::string::npos ? tol.label : tol.label.substr(0, dot);
        if (dot != std::string::npos && tol.label.substr(dot) == ".max") continue;
        double v = std::numeric_limits<double>::quiet_NaN();
        for (const auto& m : measured)
            if (m.label == base) v = m.value;
        os << "  " << base << "=" << fmt(v);
        if (dot != std::string::npos && tol.label.substr(dot) == ".min" && i + 1 < tolerances.size())
            os << " in [" << fmt(tol.value) << ", " << fmt(tolerances[i + 1].value) << "]";
        else
            os << " (tol " << fmt(tol.value) << ")";
    }
    return os.str();
}

CheckReport check_gaussian_moment(int d, int p, const McSettings& mc) {
    Stopwatch sw;
    if (d < 1 || p < 1) throw InvalidArgument("check_gaussian_moment needs d >= 1 and p >= 1");
    CheckReport rep;
    rep.name = "gaussian_moment[d=" + std::to_string(d) + ",p=" + std::to_string(p) + "]";
    rep.seed = mc.seed;
    const double half_d = 0.5 * d;
    const double exact = std::exp(p * std::log(2.0) + std::lgamma(p + half_d) - std::lgamma(half_d));
    const double bound = std::pow(static_cast<double>(d + 2 * p), p);
    rep.measure("exact", exact);
    rep.measure("bound", bound);
    rep.require_le("exact_over_bound", exact / bound, 1.0);
    if (mc.n_mc > 1) {
        const auto est = mc_estimate(
            mc.n_mc, 1, mc.workers, [d] { return Vector(d); },
            [&](std::size_t i, double* out, Vector& eta) {
                CounterRng rng(mc.seed, i, 0x3);
                rng.fill_normal({eta.data(), static_cast<std::size_t>(d)});
                out[0] = std::pow(eta.squaredNorm(), p);
            });
        rep.measure("mc", est[0].mean);
        rep.measure("mc_std_error", est[0].std_error);
        rep.require_le("mc_exact_sigmas", std::abs(est[0].mean - exact) / est[0].std_error, 4.0);
    }
    rep.wall_time_s = sw.seconds();
    return rep;
}

CheckReport check_score_norm_bound(const DataLaw& law, double t, const McSettings& mc) {
    Stopwatch sw;
    if (!(t > 0.0)) throw InvalidArgument("check_score_norm_bound needs t > 0");
    CheckReport rep;
    rep.name = "score_norm_bound";
    rep.seed = mc.seed;
    const int d = dim(law);
    const double v = std::expm1(2.0 * t);
    const double bound1 = d / v;
    const double bound2 = (2.0 * d * d + 6.0 * d) / (v * v);
    const ZSampler zs{DataSampler(law)};
    const ComponentSet cs = z_marginal_components(law, t);
    const double sd = std::sqrt(v);
    const auto est = mc_estimate(
        mc.n_mc, 2, mc.workers, [] { return EvalState{}; },
        [&](std::size_t i, double* out, EvalState& st) {
            zs.draw(mc.seed, i, st.y, st.eta);
            st.z = st.y + sd * st.eta;
            cs.evaluate(st.z, DerivLevel::jacobian, st.ev);
            out[0] = st.ev.score.squaredNorm();
            out[1] = st.ev.jacobian.squaredNorm();
        });
    rep.measure("score_sq_mc", est[0].mean);
    rep.measure("score_sq_bound", bound1);
    rep.measure("jacobian_sq_mc", est[1].mean);
    rep.measure("jacobian_sq_bound", bound2);
    rep.require_le("score_sq_excess", est[0].mean - bound1 - 3.0 * est[0].std_error, 0.0);
    rep.require_le("jacobian_sq_excess", est[1].mean - bound2 - 3.0 * est[1].std_error, 0.0);
    if (const auto spec = single_spectrum(law)) {
        const double s_exact = trace_inv_power(spec->lambda, t, 1);
        const double j_exact = trace_inv_power(spec->lambda, t, 2);
        rep.measure("score_sq_closed", s_exact);
        rep.measure("jacobian_sq_closed", j_exact);
        rep.require_le("score_sq_mc_closed_sigmas", sigmas(est[0], s_exact), 4.0);
        rep.require_le("jacobian_sq_mc_closed_sigmas", sigmas(est[1], j_exact), 4.0);
        if (std::holds_alternative<DiscreteSupport>(law)) {
            rep.require_le("point_mass_equality_relative", std::abs(est[0].mean - bound1) / bound1, 1e-3);
        }
    }
    rep.measure("n_mc", static_cast<double>(mc.n_mc));
    rep.wall_time_s = sw.seconds();
    return rep;
}

CheckReport check_time_derivative_identity(const DataLaw& law, double t, double dt, const McSettings& mc,
                                           double mixture_tol) {
    return identity_check("time_derivative_identity", law, t, 2, dt, mc, mixture_tol, true);
}

CheckReport check_generalized_identity(const DataLaw& law, double t, int m, double dt, const McSettings& mc,
                                       double mixture_tol) {
    if (m % 2 != 0 || (m != 2 && m != 4)) throw InvalidArgument("generalized identity supports m in {2, 4}");
    return identity_check("generalized_identity[m=" + std::to_string(m) + "]", law, t, m, dt, mc, mixture_tol,
                          false);
}

CheckReport check_score_fpe(const DataLaw& law, double t, const std::vector<Vector>& points, double dt, double tol) {
    if (tol < 0.0) tol = num_components(law) == 1 ? kClosedTol : kFpeMixtureTol;
    const ExactScore field(law, Space::z);
    return fpe_on_field("score_fpe", field, t, points, dt, tol);
}

CheckReport check_score_fpe(const ScoreField& z_field, double t, const std::vector<Vector>& points, double dt,
                            double tol) {
    return fpe_on_field("score_fpe", z_field, t, points, dt, tol);
}

std::vector<Vector> fpe_points(const DataLaw& law, double t, std::size_t n, std::uint64_t seed) {
    std::vector<Vector> pts;
    const double v = std::expm1(2.0 * t);
    if (dim(law) == 1) {
        // Quantiles (j + 1/2) / n of the 1D law of z_t = y + sqrt(v) eta.
        std::vector<double> w, m, sd;
        if (const auto* gm = std::get_if<GaussianMixture>(&law)) {
            for (std::size_t i = 0; i < gm->size(); ++i) {
                w.push_back(gm->weights()[i]);
                m.push_back(gm->means()[i](0));
                sd.push_back(std::sqrt(gm->covs()[i](0, 0) + v));
            }
        } else {
            const auto& ds = std::get<DiscreteSupport>(law);
            for (std::size_t i = 0; i < ds.size(); ++i) {
                w.push_back(ds.weights()[i]);
                m.push_back(ds.atoms()[i](0));
                sd.push_back(std::sqrt(v));
            }
        }
        const auto cdf = [&](double x) {
            double c = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) c += w[i] * 0.5 * std::erfc(-(x - m[i]) / (sd[i] * std::sqrt(2.0)));
            return c;
        };
        double lo = m[0], hi = m[0];
        for (std::size_t i = 0; i < w.size(); ++i) {
            lo = std::min(lo, m[i] - 12.0 * sd[i]);
            hi = std::max(hi, m[i] + 12.0 * sd[i]);
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double level = (static_cast<double>(j) + 0.5) / static_cast<double>(n);
            double a = lo, b = hi;
            for (int it = 0; it < 200; ++it) {
                const double c = 0.5 * (a + b);
                (cdf(c) < level ? a : b) = c;
            }
            pts.push_back(Vector::Constant(1, 0.5 * (a + b)));
        }
        return pts;
    }
    const ZSampler zs{DataSampler(law)};
    Vector y, eta;
    for (std::size_t j = 0; j < n; ++j) {
        zs.draw(stream_key(seed, kPointStream), j, y, eta);
        pts.push_back(y + std::sqrt(v) * eta);
    }
    return pts;
}

CheckReport check_discretization_remainder(const GaussianLaw& law, const TimeGrid& grid, std::size_t k,
                                           const McSettings& mc, bool gate_halving) {
    Stopwatch sw;
    if (k < 2 || k > grid.K() + 1) throw InvalidArgument("check_discretization_remainder needs 2 <= k <= K+1");
    CheckReport rep;
    rep.name = "discretization_remainder[k=" + std::to_string(k) + "]";
    rep.seed = mc.seed;
    const double tk = grid.t(k);
    const double t2 = grid.t(k - 2);
    const double hp = tk - t2;
    const double t2_half = tk - 0.5 * hp;

    Eigen::SelfAdjointEigenSolver<Matrix> es(law.cov());
    const Vector lam = es.eigenvalues();
    const Matrix& U = es.eigenvectors();
    const auto sqrt_cov = [&](double t) {
        const double v = std::expm1(2.0 * t);
        return Matrix(U * (lam.array() + v).sqrt().matrix().asDiagonal() * U.transpose());
    };
    const Matrix root_k = sqrt_cov(tk), root_2 = sqrt_cov(t2), root_h = sqrt_cov(t2_half);
    const ComponentSet cs = z_marginal_components(DataLaw(GaussianMixture::from_law(law)), tk);
    const double vk = std::expm1(2.0 * tk);
    // Frozen-score step: z~ = z_k + (1/2)(e^{2 t_k} - e^{2 t_{k-2}}) s_r(t_k, z_k).
    const double a_full = 0.5 * (vk - std::expm1(2.0 * t2));
    const double a_half = 0.5 * (vk - std::expm1(2.0 * t2_half));
    const int d = law.dim();

    const auto est = mc_estimate(
        mc.n_mc, 2, mc.workers, [] { return EvalState{}; },
        [&](std::size_t i, double* out, EvalState& st) {
            CounterRng rng(mc.seed, i, 0x4);
            st.eta.resize(d);
            rng.fill_normal({st.eta.data(), static_cast<std::size_t>(d)});
            st.z = law.mean() + root_k * st.eta;
            cs.evaluate(st.z, DerivLevel::score, st.ev);
            const Vector exact_full = law.mean() + root_2 * st.eta;
            const Vector exact_half = law.mean() + root_h * st.eta;
            out[0] = (st.z + a_full * st.ev.score - exact_full).squaredNorm();
            out[1] = (st.z + a_half * st.ev.score - exact_half).squaredNorm();
        });

    const auto closed_lhs = [&](double t_to, double a) {
        const double v_to = std::expm1(2.0 * t_to);
        double s = 0.0;
        for (Eigen::Index i = 0; i < lam.size(); ++i) {
            const double ck = lam(i) + vk;
            const double dcoef = std::sqrt((lam(i) + v_to) / ck) - 1.0 + a / ck;
            s += dcoef * dcoef * ck;
        }
        return s;
    };
    const double lhs_closed = closed_lhs(t2, a_full);
    const double lhs_half_closed = closed_lhs(t2_half, a_half);

    // e^{4t} E|s_r'|^2 along the flow equals e^{8t} tr C_t^{-3}.
    const auto integrand = [&](double u) { return std::exp(8.0 * u) * trace_inv_power(lam, u, 3); };
    const double integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, t2, tk, 15, 1e-12);
    const double rhs = 0.5 * hp * hp * hp * integral;

    rep.measure("t_k", tk);
    rep.measure("h_prime", hp);
    rep.measure("lhs_mc", est[0].mean);
    rep.measure("lhs_std_error", est[0].std_error);
    rep.measure("lhs_closed", lhs_closed);
    rep.measure("rhs_bound", rhs);
    rep.measure("lhs_over_rhs", est[0].mean / rhs);
    rep.require_le("bound_excess", est[0].mean - rhs - 3.0 * est[0].std_error, 0.0);
    rep.require_le("lhs_mc_closed_sigmas",
                   std::abs(est[0].mean - lhs_closed) / (est[0].std_error + 1e-12 * rhs), 4.0);
    const double ratio_closed = lhs_closed / lhs_half_closed;
    rep.measure("halving_ratio_closed", ratio_closed);
    const double ratio_mc = est[0].mean / est[1].mean;
    if (gate_halving && lhs_closed > 1e-12 * rhs) {
        rep.require_in("halving_ratio_mc", ratio_mc, 6.0, 10.0);
    } else {
        rep.measure("halving_ratio_mc", ratio_mc);
    }
    rep.measure("n_mc", static_cast<double>(mc.n_mc));
    rep.wall_time_s = sw.seconds();
    return rep;
}

std::vector<NamedLaw> standard_laws(int d) {
    std::vector<NamedLaw> out;
    out.push_back({"standard-normal", GaussianMixture::from_law(GaussianLaw::standard(d))});
    Vector mean = Vector::Constant(d, 2.0);
    Matrix cov = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) cov(i, i) = 0.5 + 0.25 * i;
    out.push_back({"shifted-normal", GaussianMixture::from_law(GaussianLaw(mean, cov))});
    Vector atom(d);
    for (int i = 0; i < d; ++i) atom(i) = (i % 2 == 0) ? 0.5 : -0.5;
    out.push_back({"point-mass", DiscreteSupport::point_mass(atom)});
    if (d == 1) {
        out.push_back({"bimodal-mixture",
                       GaussianMixture({0.5, 0.5}, {Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)},
                                       {Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 0.5)})});
    }
    return out;
}

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j) {
    SuiteConfig c;
    if (j.is_null()) return c;
    if (!j.is_object()) throw ConfigError("validation config must be an object");
    for (const auto& [key, val] : j.items()) {
        if (key == "seed") c.seed = val.get<std::uint64_t>();
        else if (key == "dims") c.dims = val.get<std::vector<int>>();
        else if (key == "times") c.times = val.get<std::vector<double>>();
        else if (key == "n_mc_mixture") c.n_mc_mixture = val.get<std::size_t>();
        else if (key == "n_mc_closed") c.n_mc_closed = val.get<std::size_t>();
        else if (key == "n_mc_bound") c.n_mc_bound = val.get<std::size_t>();
        else if (key == "point_mass_budget") c.point_mass_budget = val.get<double>();
        else if (key == "moment_dims") c.moment_dims = val.get<std::vector<int>>();
        else if (key == "moment_powers") c.moment_powers = val.get<std::vector<int>>();
        else if (key == "n_mc_moment") c.n_mc_moment = val.get<std::size_t>();
        else if (key == "dt_expectation") c.dt_expectation = val.get<double>();
        else if (key == "dt_pointwise") c.dt_pointwise = val.get<double>();
        else if (key == "fpe_points") c.fpe_points = val.get<std::size_t>();
        else if (key == "remainder") c.remainder = val.get<bool>();
        else throw ConfigError("unknown key in validation config: " + key);
    }
    return c;
}

nlohmann::json SuiteConfig::to_json() const {
    return {{"seed", seed},
            {"dims", dims},
            {"times", times},
            {"n_mc_mixture", n_mc_mixture},
            {"n_mc_closed", n_mc_closed},
            {"n_mc_bound", n_mc_bound},
            {"point_mass_budget", point_mass_budget},
            {"moment_dims", moment_dims},
            {"moment_powers", moment_powers},
            {"n_mc_moment", n_mc_moment},
            {"dt_expectation", dt_expectation},
            {"dt_pointwise", dt_pointwise},
            {"fpe_points", fpe_points},
            {"remainder", remainder}};
}

std::vector<CheckReport> run_identity_checks(const SuiteConfig& cfg) {
    std::vector<CheckReport> out;
    std::uint64_t index = 0;
    for (int d : cfg.dims) {
        for (const auto& [name, law] : standard_laws(d)) {
            const bool single = num_components(law) == 1;
            for (double t : cfg.times) {
                const std::string tag = law_tag(name, d, t);
                McSettings mc{single ? cfg.n_mc_closed : cfg.n_mc_mixture, stream_key(cfg.seed, 0x1D, index++),
                              cfg.workers};
                out.push_back(check_time_derivative_identity(law, t, cfg.dt_expectation, mc));
                out.back().name += tag;
                mc.seed = stream_key(cfg.seed, 0x1D, index++);
                out.push_back(check_generalized_identity(law, t, 4, cfg.dt_expectation, mc));
                out.back().name += tag;
                const auto pts = fpe_points(law, t, cfg.fpe_points, stream_key(cfg.seed, 0xFE, index++));
                out.push_back(check_score_fpe(law, t, pts, cfg.dt_pointwise));
                out.back().name += tag;
            }
        }
    }
    return out;
}

std::vector<CheckReport> run_bound_checks(const SuiteConfig& cfg) {
    std::vector<CheckReport> out;
    std::uint64_t index = 0;
    for (int d : cfg.moment_dims) {
        for (int p : cfg.moment_powers) {
            out.push_back(check_gaussian_moment(d, p, {cfg.n_mc_moment, stream_key(cfg.seed, 0x60, index++), cfg.workers}));
        }
    }
    for (int d : cfg.dims) {
        for (const auto& [name, law] : standard_laws(d)) {
            std::size_t n = cfg.n_mc_bound;
            if (std::holds_alternative<DiscreteSupport>(law) && num_components(law) == 1)
                n = std::max(n, static_cast<std::size_t>(std::ceil(cfg.point_mass_budget / d)));
            for (double t : cfg.times) {
                out.push_back(check_score_norm_bound(law, t, {n, stream_key(cfg.seed, 0xB0, index++), cfg.workers}));
                out.back().name += law_tag(name, d, t);
            }
        }
    }
    return out;
}

TimeGrid remainder_reference_grid() { return grid_from_iterations(1e-2, 12.0, 100).grid; }

std::vector<std::size_t> remainder_reference_steps(const TimeGrid& grid) {
    const std::size_t K = grid.K();
    return {K / 4, K / 2, (3 * K) / 4};
}

std::vector<CheckReport> run_remainder_checks(const SuiteConfig& cfg, bool gate_halving) {
    std::vector<CheckReport> out;
    const TimeGrid grid = remainder_reference_grid();
    const GaussianLaw shifted(Vector::Constant(1, 3.0), Matrix::Identity(1, 1));
    std::uint64_t index = 0;
    for (std::size_t k : remainder_reference_steps(grid)) {
        out.push_back(check_discretization_remainder(
            shifted, grid, k, {cfg.n_mc_closed, stream_key(cfg.seed, 0xD1, index++), cfg.workers}, gate_halving));
        out.back().name += "[N(3,1)]";
    }
    const std::size_t mid = grid.K() / 2;
    out.push_back(check_discretization_remainder(GaussianLaw::standard(1), grid, mid,
                                                 {cfg.n_mc_closed, stream_key(cfg.seed, 0xD1, index++), cfg.workers},
                                                 gate_halving));
    out.back().name += "[N(0,1)]";
    return out;
}

std::vector<CheckReport> run_validation_suite(const SuiteConfig& cfg) {
    auto out = run_identity_checks(cfg);
    auto bounds = run_bound_checks(cfg);
    out.insert(out.end(), bounds.begin(), bounds.end());
    if (cfg.remainder) {
        auto rem = run_remainder_checks(cfg, false);
        out.insert(out.end(), rem.begin(), rem.end());
    }
    return out;
}

}  // namespace onsl
