#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "onsl/validator.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace onsl;
using namespace onsl::testing;

namespace {

// z-space field equal to `base` plus a constant bias.
class BiasedSlice final : public ScoreSlice {
public:
    BiasedSlice(std::unique_ptr<const ScoreSlice> base, Vector bias) : base_(std::move(base)), bias_(std::move(bias)) {}
    int dim() const override { return base_->dim(); }
    bool has_derivatives() const override { return base_->has_derivatives(); }
    void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const override {
        base_->evaluate(x, level, out);
        out.score += bias_;
    }

private:
    std::unique_ptr<const ScoreSlice> base_;
    Vector bias_;
};

class BiasedField final : public ScoreField {
public:
    BiasedField(ScoreFieldPtr base, Vector bias, bool derivs = true)
        : base_(std::move(base)), bias_(std::move(bias)), derivs_(derivs) {}
    int dim() const override { return base_->dim(); }
    Space space() const override { return base_->space(); }
    bool has_derivatives() const override { return derivs_; }
    std::unique_ptr<const ScoreSlice> at(double t) const override {
        return std::make_unique<BiasedSlice>(base_->at(t), bias_);
    }
    std::string describe() const override { return "biased"; }

private:
    ScoreFieldPtr base_;
    Vector bias_;
    bool derivs_;
};

DataLaw standard(int d) { return GaussianMixture::from_law(GaussianLaw::standard(d)); }
DataLaw bimodal_1d() {
    const Matrix half = 0.5 * Matrix::Identity(1, 1);
    return GaussianMixture({0.5, 0.5}, {Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)}, {half, half});
}

// E|eta|^{2p} = d (d + 2) ... (d + 2p - 2)
double chi_square_moment(int d, int p) {
    double m = 1.0;
    for (int j = 0; j < p; ++j) m *= d + 2.0 * j;
    return m;
}

// Exact reverse-flow factor of one coordinate with data variance lambda:
// dz/dt = e^{2t} z / (lambda + e^{2t} - 1) from t_k back to t_to, via RK4.
double flow_factor(double lambda, double tk, double t_to) {
    const int n = 20000;
    const double dt = (t_to - tk) / n;
    auto f = [&](double t, double z) { return std::exp(2 * t) * z / (lambda + std::expm1(2 * t)); };
    double z = 1.0, t = tk;
    for (int i = 0; i < n; ++i) {
        const double k1 = f(t, z), k2 = f(t + dt / 2, z + dt / 2 * k1), k3 = f(t + dt / 2, z + dt / 2 * k2),
                     k4 = f(t + dt, z + dt * k3);
        z += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += dt;
    }
    return z;
}

}  // namespace

TEST_CASE("Gaussian moment check") {
    const McSettings mc{100000, 3, 1};
    const auto r11 = check_gaussian_moment(1, 1, mc);
    CHECK(r11.passed);
    CHECK(r11.value("exact") == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r11.value("bound") == 3.0);
    const auto r22 = check_gaussian_moment(2, 2, mc);
    CHECK(r22.passed);
    CHECK(r22.value("exact") == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(r22.value("bound") == 36.0);
    const auto r = check_gaussian_moment(100, 6, mc);
    CHECK(r.passed);
    CHECK(r.value("exact") == doctest::Approx(chi_square_moment(100, 6)).epsilon(1e-12));
    CHECK(r.value("exact") <= std::pow(112.0, 6));
    for (int d : {3, 7}) {
        for (int p = 1; p <= 6; ++p)
            CHECK(check_gaussian_moment(d, p, {0, 1, 1}).value("exact") ==
                  doctest::Approx(chi_square_moment(d, p)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(check_gaussian_moment(0, 1, mc), InvalidArgument);
}

TEST_CASE("score norm bounds") {
    const McSettings mc{100000, 4, 1};
    SUBCASE("point mass is the equality case") {
        const int d = 8;
        const double t = 0.5;
        const auto r = check_score_norm_bound(DiscreteSupport::point_mass(Vector::Zero(d)), t, {4000000, 4, 1});
        CHECK(r.passed);
        CHECK(r.value("score_sq_bound") == doctest::Approx(d / std::expm1(2 * t)).epsilon(1e-14));
        CHECK(std::abs(r.value("score_sq_mc") / r.value("score_sq_bound") - 1.0) < 1e-3);
    }
    SUBCASE("standard normal") {
        const int d = 3;
        const double t = 0.4;
        const auto r = check_score_norm_bound(standard(d), t, mc);
        CHECK(r.passed);
        CHECK(r.value("score_sq_closed") == doctest::Approx(d * std::exp(-2 * t)).epsilon(1e-13));
        CHECK(r.value("score_sq_closed") <= r.value("score_sq_bound"));
        // |grad s_r|_F^2 = d e^{-4t}
        CHECK(r.value("jacobian_sq_closed") == doctest::Approx(d * std::exp(-4 * t)).epsilon(1e-13));
        CHECK(r.value("jacobian_sq_bound") == doctest::Approx((2.0 * d * d + 6 * d) / std::pow(std::expm1(2 * t), 2)).epsilon(1e-14));
    }
    SUBCASE("two-component mixture in 2D") {
        CounterRng rng(4, 1);
        const auto r = check_score_norm_bound(random_mixture(rng, 2, 2), 0.5, mc);
        CHECK(r.passed);
        CHECK(r.value("score_sq_excess") <= 0.0);
        CHECK(r.value("score_sq_mc") < r.value("score_sq_bound"));
    }
}

TEST_CASE("time-derivative identity") {
    const McSettings mc{100000, 5, 1};
    SUBCASE("standard normal, closed form") {
        for (int d : {1, 4}) {
            const double t = 0.6;
            const auto r = check_time_derivative_identity(standard(d), t, 1e-3, mc);
            CHECK(r.passed);
            CHECK(r.value("lhs_closed") == doctest::Approx(-2.0 * d * std::exp(-2 * t)).epsilon(1e-9));
            CHECK(r.value("rhs_closed") == doctest::Approx(-2.0 * d * std::exp(-2 * t)).epsilon(1e-13));
        }
    }
    SUBCASE("point mass, closed form") {
        const int d = 2;
        const double t = 0.3;
        const auto r = check_time_derivative_identity(DiscreteSupport::point_mass(Vector::Constant(d, 0.5)), t, 1e-3, mc);
        CHECK(r.passed);
        const double expect = -2.0 * d * std::exp(2 * t) / std::pow(std::expm1(2 * t), 2);
        CHECK(r.value("lhs_closed") == doctest::Approx(expect).epsilon(1e-8));
        CHECK(r.value("rhs_closed") == doctest::Approx(expect).epsilon(1e-13));
    }
    SUBCASE("1D mixture by Monte Carlo") {
        const auto r = check_time_derivative_identity(bimodal_1d(), 0.7, 1e-3, {1000000, 6, 1});
        CHECK(r.passed);
        CHECK(r.value("relative_residual_mc") < 1e-2);
    }
    SUBCASE("t must exceed dt") {
        CHECK_THROWS_AS(check_time_derivative_identity(standard(1), 1e-4, 1e-3, mc), InvalidArgument);
    }
}

TEST_CASE("generalized identity") {
    const McSettings mc{100000, 7, 1};
    SUBCASE("m = 2 coincides with the time-derivative identity") {
        for (const DataLaw& law : {standard(2), bimodal_1d()}) {
            const auto a = check_time_derivative_identity(law, 0.5, 1e-3, mc);
            const auto b = check_generalized_identity(law, 0.5, 2, 1e-3, mc);
            const char* label = num_components(law) == 1 ? "relative_residual_closed" : "relative_residual_mc";
            CHECK(std::abs(a.value(label) - b.value(label)) < 1e-10);
            CHECK(a.passed == b.passed);
        }
    }
    SUBCASE("standard normal, m = 4") {
        for (int d : {1, 3}) {
            const double t = 0.5;
            const auto r = check_generalized_identity(standard(d), t, 4, 1e-3, mc);
            CHECK(r.passed);
            // E|s_r|^4 = d (d + 2) e^{-4t}
            const double expect = -4.0 * d * (d + 2) * std::exp(-6 * t);
            CHECK(r.value("lhs_closed") == doctest::Approx(expect).epsilon(1e-8));
            CHECK(r.value("rhs_closed") == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    SUBCASE("1D mixture, m = 4") {
        const auto r = check_generalized_identity(bimodal_1d(), 0.5, 4, 1e-3, {1000000, 8, 1}, 3e-2);
        CHECK(r.passed);
        CHECK(r.value("relative_residual_mc") < 3e-2);
    }
    SUBCASE("unsupported powers") {
        CHECK_THROWS_AS(check_generalized_identity(standard(1), 0.5, 3, 1e-3, mc), InvalidArgument);
        CHECK_THROWS_AS(check_generalized_identity(standard(1), 0.5, 6, 1e-3, mc), InvalidArgument);
    }
}

TEST_CASE("score Fokker-Planck check") {
    SUBCASE("standard normal against the closed form") {
        const double t = 0.5;
        const auto field = make_exact_score(standard(2), Space::z);
        const Vector z = (Vector(2) << 0.7, -1.3).finished();
        // s_r = -z e^{-2t}, so d/dt s_r = 2 z e^{-2t}
        const double dt = 1e-5;
        const Vector fd = (field->score(t + dt, z) - field->score(t - dt, z)) / (2 * dt);
        CHECK(rel_err(fd, Vector(2 * z * std::exp(-2 * t))) < 1e-8);
        const double e2t = std::exp(2 * t);
        const Vector rhs = e2t * field->laplacian(t, z) + 2 * e2t * field->jacobian(t, z).transpose() * field->score(t, z);
        CHECK(rel_err(rhs, Vector(2 * z * std::exp(-2 * t))) < 1e-13);
        const auto r = check_score_fpe(standard(2), t, fpe_points(standard(2), t, 20, 1), 1e-4);
        CHECK(r.passed);
        CHECK(r.value("relative_residual") < 1e-8);
    }
    SUBCASE("point mass") {
        const Vector y = (Vector(2) << 0.5, -0.5).finished();
        const DataLaw atom = DiscreteSupport::point_mass(y);
        const double t = 0.8;
        const Vector z = (Vector(2) << 1.0, 2.0).finished();
        const double v = std::expm1(2 * t);
        // both sides: 2 e^{2t} (z - y) / v^2
        const auto field = make_exact_score(atom, Space::z);
        const double e2t = std::exp(2 * t);
        const Vector rhs = e2t * field->laplacian(t, z) + 2 * e2t * field->jacobian(t, z).transpose() * field->score(t, z);
        CHECK(rel_err(rhs, Vector(2 * e2t * (z - y) / (v * v))) < 1e-13);
        CHECK(check_score_fpe(atom, t, {z}, 1e-4).passed);
    }
    SUBCASE("1D mixture at quantile points") {
        const auto pts = fpe_points(bimodal_1d(), 0.5, 20, 2);
        CHECK(pts.size() == 20);
        const auto r = check_score_fpe(bimodal_1d(), 0.5, pts, 1e-4, 1e-3);
        CHECK(r.passed);
        CHECK(r.value("relative_residual") < 1e-3);
    }
    SUBCASE("a biased score fails") {
        for (const DataLaw& law : {standard(2), bimodal_1d()}) {
            const int d = dim(law);
            const auto biased = std::make_shared<BiasedField>(make_exact_score(law, Space::z), Vector::Constant(d, 0.1));
            const auto r = check_score_fpe(*biased, 0.5, fpe_points(law, 0.5, 20, 3), 1e-4, 1e-3);
            CHECK_FALSE(r.passed);
            CHECK(r.value("relative_residual") > 1e-3);
        }
    }
    SUBCASE("missing derivatives") {
        const auto plain = std::make_shared<BiasedField>(make_exact_score(standard(1), Space::z), Vector::Zero(1), false);
        CHECK_THROWS_AS(check_score_fpe(*plain, 0.5, {Vector::Zero(1)}, 1e-4, 1e-3), ContractError);
        const auto x_field = make_exact_score(standard(1), Space::x);
        CHECK_THROWS_AS(check_score_fpe(*x_field, 0.5, {Vector::Zero(1)}, 1e-4, 1e-3), InvalidArgument);
    }
}

TEST_CASE("discretization remainder") {
    const TimeGrid grid = remainder_reference_grid();
    const auto steps = remainder_reference_steps(grid);
    REQUIRE(steps.size() == 3);
    const McSettings mc{200000, 9, 1};
    SUBCASE("standard normal has a nonzero remainder of fourth order") {
        const int d = 3;
        for (std::size_t k : steps) {
            const auto r = check_discretization_remainder(GaussianLaw::standard(d), grid, k, mc, false);
            const double tk = grid.t(k), hp = grid.t(k) - grid.t(k - 2);
            const double closed = d * std::exp(2 * tk) * std::pow(-std::expm1(-hp), 4) / 4;
            CHECK(r.value("lhs_closed") == doctest::Approx(closed).epsilon(1e-10));
            CHECK(r.value("lhs_closed") > 0.0);
            CHECK(r.passed);
            // halving h' at fixed t_k divides a fourth-order remainder by 16 as h' -> 0
            const double half = d * std::exp(2 * tk) * std::pow(-std::expm1(-hp / 2), 4) / 4;
            CHECK(r.value("halving_ratio_closed") == doctest::Approx(closed / half).epsilon(1e-10));
            CHECK(r.value("halving_ratio_closed") > 10.0);
        }
    }
    SUBCASE("anisotropic Gaussian against an integrated flow") {
        const Vector lam = (Vector(2) << 0.2, 3.0).finished();
        const GaussianLaw law(Vector::Constant(2, 3.0), lam.asDiagonal().toDenseMatrix());
        const std::size_t k = steps[1];
        const double tk = grid.t(k), t2 = grid.t(k - 2);
        const double vk = std::expm1(2 * tk);
        double expect = 0.0;
        for (int i = 0; i < 2; ++i) {
            const double frozen = 1.0 - 0.5 * (vk - std::expm1(2 * t2)) / (lam(i) + vk);
            const double diff = flow_factor(lam(i), tk, t2) - frozen;
            expect += diff * diff * (lam(i) + vk);
        }
        const auto r = check_discretization_remainder(law, grid, k, mc, false);
        CHECK(r.value("lhs_closed") == doctest::Approx(expect).epsilon(1e-8));
        CHECK(r.passed);
        CHECK(r.value("lhs_over_rhs") < 1.0);
    }
    SUBCASE("shifted 1D normal at mid-grid") {
        const GaussianLaw law(Vector::Constant(1, 3.0), Matrix::Identity(1, 1));
        const auto r = check_discretization_remainder(law, grid, steps[1], mc, false);
        CHECK(r.passed);
        CHECK(r.value("bound_excess") <= 0.0);
        CHECK(r.value("lhs_over_rhs") < 1.0);
    }
    SUBCASE("gating the halving ratio to [6, 10] fails on a fourth-order remainder") {
        const GaussianLaw law(Vector::Constant(1, 3.0), Matrix::Identity(1, 1));
        const auto r = check_discretization_remainder(law, grid, steps[1], mc, true);
        CHECK_FALSE(r.passed);
        CHECK(r.value("halving_ratio_mc") > 10.0);
    }
    CHECK_THROWS_AS(check_discretization_remainder(GaussianLaw::standard(1), grid, 1, mc), InvalidArgument);
}

TEST_CASE("reports") {
    const auto r = check_gaussian_moment(2, 2, {1000, 3, 1});
    const auto j = r.to_json();
    CHECK(j.at("status") == "pass");
    CHECK(j.at("seed") == 3);
    CHECK_FALSE(j.contains("wall_time_s"));
    CHECK(r.to_json(true).contains("wall_time_s"));
    CHECK(r.summary_line().rfind("PASS gaussian_moment", 0) == 0);
    CHECK(r.to_json() == check_gaussian_moment(2, 2, {1000, 3, 1}).to_json());
    CHECK_THROWS_AS(r.value("missing"), InvalidArgument);
    CheckReport rep;
    rep.require_le("x", std::nan(""), 1.0);
    CHECK_FALSE(rep.passed);
}

TEST_CASE("suite configuration") {
    const SuiteConfig defaults;
    CHECK(SuiteConfig::from_json(nlohmann::json::object()).to_json() == defaults.to_json());
    CHECK(defaults.dims == std::vector<int>{1, 2, 8});
    CHECK(defaults.times == std::vector<double>{0.1, 0.5, 1.5});
    CHECK_THROWS_AS(SuiteConfig::from_json({{"n_mc_typo", 3}}), ConfigError);
    const auto laws = standard_laws(1);
    CHECK(laws.size() == 4);
    CHECK(standard_laws(2).size() == 3);
}

TEST_CASE("reduced suite passes") {
    SuiteConfig cfg;
    cfg.dims = {1, 2};
    cfg.times = {0.5};
    cfg.n_mc_closed = 20000;
    cfg.n_mc_bound = 20000;
    cfg.point_mass_budget = 2e6;
    cfg.moment_dims = {1, 10};
    cfg.moment_powers = {1, 3};
    cfg.n_mc_moment = 20000;
    const auto reports = run_validation_suite(cfg);
    CHECK(reports.size() > 10);
    for (const auto& r : reports) {
        INFO(r.summary_line());
        CHECK(r.passed);
    }
}
