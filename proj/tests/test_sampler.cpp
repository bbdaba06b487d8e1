#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "onsl/batch_io.hpp"
#include "onsl/metrics.hpp"
#include "onsl/propagation.hpp"
#include "onsl/sampler.hpp"
#include "onsl/score_field.hpp"
#include "test_support.hpp"

#include <cmath>
#include <filesystem>

using namespace onsl;
using namespace onsl::testing;

namespace {

// s(t, x) = A x + b independent of t.
class ConstantAffineSlice final : public ScoreSlice {
public:
    explicit ConstantAffineSlice(AffineMap m) : m_(std::move(m)) {}
    int dim() const override { return static_cast<int>(m_.b.size()); }
    bool has_derivatives() const override { return true; }
    void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const override {
        out.score = m_.A * x + m_.b;
        if (level != DerivLevel::score) out.jacobian = m_.A;
        if (level == DerivLevel::laplacian) out.laplacian = Vector::Zero(dim());
    }
    std::optional<AffineMap> affine() const override { return m_; }

private:
    AffineMap m_;
};

class ConstantAffineField final : public ScoreField {
public:
    ConstantAffineField(Matrix A, Vector b) : m_{std::move(A), std::move(b)} {}
    int dim() const override { return static_cast<int>(m_.b.size()); }
    Space space() const override { return Space::x; }
    bool has_derivatives() const override { return true; }
    std::unique_ptr<const ScoreSlice> at(double) const override { return std::make_unique<ConstantAffineSlice>(m_); }
    std::string describe() const override { return "test-affine"; }

private:
    AffineMap m_;
};

ScoreFieldPtr zero_field(int d) { return std::make_shared<ConstantAffineField>(Matrix::Zero(d, d), Vector::Zero(d)); }
ScoreFieldPtr minus_identity(int d) {
    return std::make_shared<ConstantAffineField>(-Matrix::Identity(d, d), Vector::Zero(d));
}

// Reverse probability-flow ODE dx/dt = -x - s(t, x) integrated from t0 to t1 with RK4.
Vector rk4_flow(const ScoreField& s, const Vector& x0, double t0, double t1, int n) {
    const double dt = (t1 - t0) / n;
    auto f = [&](double t, const Vector& x) -> Vector { return -x - s.score(t, x); };
    Vector x = x0;
    double t = t0;
    for (int i = 0; i < n; ++i) {
        const Vector k1 = f(t, x);
        const Vector k2 = f(t + dt / 2, x + dt / 2 * k1);
        const Vector k3 = f(t + dt / 2, x + dt / 2 * k2);
        const Vector k4 = f(t + dt, x + dt * k3);
        x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += dt;
    }
    return x;
}

TimeGrid three_point_grid(double t_start, double h_k, double h_km1) {
    const double a = t_start - h_k - h_km1;
    return TimeGrid(a, t_start, 0.1, {a, t_start - h_k, t_start}, 0);
}

double max_abs_diff(const RowMatrix& a, const RowMatrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("two-phase step examples") {
    const TimeGrid grid = build_time_grid(0.05, 3.0, 0.2);
    const std::size_t k = 5;
    const double hk = grid.h(k), hkm1 = grid.h(k - 1);
    const Vector x = (Vector(2) << 0.7, -1.1).finished();
    const Vector noise = (Vector(2) << 0.2, 0.5).finished();

    SUBCASE("stationary score: ODE half is the identity") {
        const Vector out = ode_noise_step(x, k, grid, *minus_identity(2), Vector::Zero(2));
        CHECK(rel_err(out, Vector(std::exp(-hkm1) * x)) < 1e-14);
        const Vector noisy = ode_noise_step(x, k, grid, *minus_identity(2), noise);
        CHECK(rel_err(noisy, Vector(std::exp(-hkm1) * x + std::sqrt(1 - std::exp(-2 * hkm1)) * noise)) < 1e-14);
    }
    SUBCASE("zero score: pure expansion plus noise") {
        const Vector out = ode_noise_step(x, k, grid, *zero_field(2), noise);
        const Vector expect = std::exp(hk) * x + std::sqrt(1 - std::exp(-2 * hkm1)) * noise;
        CHECK(rel_err(out, expect) < 1e-14);
    }
    SUBCASE("index bounds") {
        CHECK_THROWS_AS(ode_noise_step(x, 1, grid, *zero_field(2), noise), InvalidArgument);
        CHECK_THROWS(ode_noise_step(x, grid.K() + 2, grid, *zero_field(2), noise));
    }
    SUBCASE("baseline steps") {
        const auto s = minus_identity(2);
        const double E = std::exp(hk);
        const Vector ei = ei_sde_step(x, k, grid, *s, noise);
        CHECK(rel_err(ei, Vector(E * x - 2 * (E - 1) * x + std::sqrt(E * E - 1) * noise)) < 1e-14);
        CHECK(rel_err(pf_ode_step(x, k, grid, *s), x) < 1e-14);
        CHECK(rel_err(pf_ode_step(x, k, grid, *zero_field(2)), Vector(E * x)) < 1e-14);
    }
}

TEST_CASE("ODE half has second-order local error") {
    CounterRng rng(3, 1);
    const DataLaw law = two_component_mixture_1d();
    const auto s = make_exact_score(law);
    const Vector gaussian_mu = (Vector(2) << 1.0, -2.0).finished();
    const Matrix gaussian_cov = (Matrix(2, 2) << 2.0, 0.6, 0.6, 0.4).finished();
    const auto aniso = make_exact_score(GaussianMixture::from_law(GaussianLaw(gaussian_mu, gaussian_cov)));
    struct Case {
        ScoreFieldPtr field;
        int d;
    };
    for (const Case& c : {Case{s, 1}, Case{aniso, 2}}) {
        for (int trial = 0; trial < 5; ++trial) {
            const double t_start = 0.6 + rng.uniform();
            const Vector x = random_vector(rng, c.d, 1.5);
            auto half_error = [&](double hk, double hkm1) {
                const TimeGrid g = three_point_grid(t_start, hk, hkm1);
                // undo the deterministic noising factor to isolate the ODE half
                const Vector ode = ode_noise_step(x, 2, g, *c.field, Vector::Zero(c.d)) * std::exp(hkm1);
                const Vector exact = rk4_flow(*c.field, x, t_start, t_start - hk - hkm1, 4000);
                return (ode - exact).norm();
            };
            const double e1 = half_error(0.04, 0.036);
            const double e2 = half_error(0.02, 0.018);
            const double ratio = e1 / e2;
            CHECK(ratio >= 3.5);
            CHECK(ratio <= 4.5);
        }
    }
}

TEST_CASE("sampler schedule follows the grid") {
    const TimeGrid grid = build_time_grid(0.01, 10.0, 0.1);
    const auto sched = algorithm1_schedule(grid);
    REQUIRE(sched.size() == grid.K());
    CHECK(sched.front().k == grid.K() + 1);
    CHECK(sched.back().k == 2);
    for (const auto& st : sched) {
        CHECK(st.start == grid.t(st.k));
        CHECK(st.ode_target == grid.t(st.k - 2));
        CHECK(st.noise_end == grid.t(st.k - 1));
        CHECK(std::abs(st.start - (grid.h(st.k) + grid.h(st.k - 1)) - st.ode_target) < 1e-14);
    }
    // the last step ends at t_1, the batch time
    CHECK(sched.back().noise_end == grid.t(1));
}

TEST_CASE("config validation and hashing") {
    const TimeGrid grid = build_time_grid(0.05, 3.0, 0.2);
    const auto s = minus_identity(2);
    SamplerConfig cfg{grid, s, 10, 1, Variant::ode_noise, 1};
    CHECK_NOTHROW(validate(cfg));
    SamplerConfig bad = cfg;
    bad.n_samples = 0;
    CHECK_THROWS_AS(validate(bad), InvalidArgument);
    bad = cfg;
    bad.score = nullptr;
    CHECK_THROWS_AS(validate(bad), InvalidArgument);
    bad = cfg;
    bad.grid = TimeGrid(0.5, 1.5, 0.1, {0.5, 1.0, 1.5}, 1);
    CHECK_THROWS_AS(validate(bad), InvalidArgument);
    bad = cfg;
    bad.score = make_exact_score(GaussianMixture::from_law(GaussianLaw::standard(2)), Space::z);
    CHECK_THROWS_AS(validate(bad), InvalidArgument);

    SamplerConfig other = cfg;
    other.workers = 7;
    CHECK(config_hash(other) == config_hash(cfg));
    other.seed = 2;
    CHECK(config_hash(other) != config_hash(cfg));
    other = cfg;
    other.variant = Variant::pf_ode;
    CHECK(config_hash(other) != config_hash(cfg));
    for (Variant v : {Variant::ode_noise, Variant::ei_sde, Variant::pf_ode}) CHECK(variant_from_string(to_string(v)) == v);
    CHECK(to_string(Variant::ode_noise) == "ode-noise");
    CHECK_THROWS_AS(variant_from_string("heun"), InvalidArgument);
}

TEST_CASE("determinism") {
    const DataLaw law = two_component_mixture_1d();
    const TimeGrid grid = build_time_grid(0.02, 4.0, 0.15);
    for (Variant v : {Variant::ode_noise, Variant::ei_sde, Variant::pf_ode}) {
        SamplerConfig cfg{grid, make_exact_score(law), 5000, 42, v, 1};
        const SampleBatch a = run_sampler(cfg);
        const SampleBatch b = run_sampler(cfg);
        CHECK(max_abs_diff(a.points, b.points) == 0.0);
        CHECK(a.config_hash == b.config_hash);
        CHECK(a.at_time == grid.t(1));
        cfg.workers = 3;
        CHECK(max_abs_diff(run_sampler(cfg).points, a.points) == 0.0);
        cfg.seed = 43;
        CHECK(max_abs_diff(run_sampler(cfg).points, a.points) > 0.0);
    }
}

TEST_CASE("standard normal is a fixed point of all samplers") {
    const int d = 2;
    const auto s = make_exact_score(GaussianMixture::from_law(GaussianLaw::standard(d)));
    const TimeGrid grid = build_time_grid(0.01, 5.0, 0.2);
    for (Variant v : {Variant::ode_noise, Variant::ei_sde, Variant::pf_ode}) {
        SamplerConfig cfg{grid, s, 1000000, 5, v, 1};
        const SampleBatch batch = run_sampler(cfg);
        const GaussianLaw fit = empirical_gaussian_fit(batch.points);
        const double kl = kl_gaussian(fit, GaussianLaw::standard(d));
        INFO(to_string(v), " kl=", kl);
        // the EI-SDE stationary variance is perturbed at order h^2 per step
        if (v == Variant::ei_sde) {
            const GaussianLaw exact = propagate_ei_sde_gaussian(grid, *s);
            CHECK(kl_gaussian(fit, exact) < 1e-3);
        } else {
            CHECK(kl < 1e-3);
            for (int i = 0; i < d; ++i) CHECK(std::abs(fit.mean()(i)) < 4.0 / std::sqrt(1e6));
        }
    }
}

TEST_CASE("pure probability flow with the stationary score returns the initial draws") {
    const int d = 3;
    const TimeGrid grid = build_time_grid(0.01, 5.0, 0.2);
    SamplerConfig cfg{grid, minus_identity(d), 100, 9, Variant::pf_ode, 1};
    const SampleBatch batch = run_pf_ode(cfg);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        CounterRng init(cfg.seed, i, 0);
        for (int j = 0; j < d; ++j) CHECK(batch.points(i, j) == doctest::Approx(init.normal()).epsilon(1e-12));
    }
}

TEST_CASE("scalar recursions of the baseline") {
    const TimeGrid grid = build_time_grid(0.05, 4.0, 0.25);
    SUBCASE("stationary score") {
        double v = 1.0;
        for (std::size_t k = grid.K() + 1; k >= 2; --k) {
            const double E = std::exp(grid.h(k));
            v = (2 - E) * (2 - E) * v + (E * E - 1);
        }
        const GaussianLaw out = propagate_ei_sde_gaussian(grid, *minus_identity(1));
        CHECK(out.cov()(0, 0) == doctest::Approx(v).epsilon(1e-13));
        CHECK(std::abs(v - 1.0) > 1e-3);
        // one-step fixed point v* = (E^2 - 1) / (1 - (2 - E)^2) differs from 1
        const double E = std::exp(0.1);
        CHECK(std::abs((E * E - 1) / (1 - (2 - E) * (2 - E)) - 1.0) > 1e-3);
    }
    SUBCASE("zero score") {
        double v = 1.0;
        for (std::size_t k = grid.K() + 1; k >= 2; --k) {
            const double E2 = std::exp(2 * grid.h(k));
            v = E2 * v + (E2 - 1);
        }
        const double closed = 2 * std::exp(2 * (grid.horizon() - grid.t(1))) - 1;
        CHECK(v == doctest::Approx(closed).epsilon(1e-12));
        const GaussianLaw out = propagate_ei_sde_gaussian(grid, *zero_field(1));
        CHECK(out.cov()(0, 0) == doctest::Approx(closed).epsilon(1e-12));
        CHECK(out.mean()(0) == 0.0);
        SamplerConfig cfg{grid, zero_field(1), 200000, 3, Variant::ei_sde, 1};
        const GaussianLaw fit = empirical_gaussian_fit(run_ei_sde_baseline(cfg).points);
        CHECK(std::abs(fit.cov()(0, 0) - closed) <= 4 * closed * std::sqrt(2.0 / 200000));
    }
}

TEST_CASE("shifted 1D normal on the reference grid against the exact law") {
    const auto s = make_exact_score(GaussianMixture::from_law(GaussianLaw(Vector::Constant(1, 3.0), Matrix::Identity(1, 1))));
    const TimeGrid grid = build_time_grid(0.01, 10.0, 0.1);
    REQUIRE(grid.num_steps() == 134);
    const GaussianLaw exact = propagate_algorithm1_gaussian(grid, *s);
    SamplerConfig cfg{grid, s, 1000000, 17, Variant::ode_noise, 1};
    const GaussianLaw fit = empirical_gaussian_fit(run_algorithm1(cfg).points);
    const double n = 1e6, var = exact.cov()(0, 0);
    CHECK(std::abs(fit.mean()(0) - exact.mean()(0)) <= 4 * std::sqrt(var / n));
    CHECK(std::abs(fit.cov()(0, 0) - var) <= 4 * var * std::sqrt(2 / n));
}

TEST_CASE("affine closure for every sampler") {
    CounterRng rng(3, 2);
    for (int d : {1, 2, 8}) {
        const Vector mu = random_vector(rng, d, 1.5);
        const Matrix S = random_spd(rng, d);
        const DataLaw law = GaussianMixture::from_law(GaussianLaw(mu, S));
        const GridSolution sol = grid_from_iterations(0.02, 5.0, 30);
        const auto s = perturb_score(make_exact_score(law), PerturbMode::relative_scaling, 0.1, sol.grid, 4, &law);
        for (Variant v : {Variant::ode_noise, Variant::ei_sde, Variant::pf_ode}) {
            const GaussianLaw exact = propagate_gaussian(v, sol.grid, *s);
            SamplerConfig cfg{sol.grid, s, 100000, 21, v, 1};
            const GaussianLaw fit = empirical_gaussian_fit(run_sampler(cfg).points);
            const double n = static_cast<double>(cfg.n_samples);
            const Matrix& C = exact.cov();
            for (int i = 0; i < d; ++i) {
                CHECK(std::abs(fit.mean()(i) - exact.mean()(i)) <= 4 * std::sqrt(C(i, i) / n));
                for (int j = 0; j <= i; ++j)
                    CHECK(std::abs(fit.cov()(i, j) - C(i, j)) <= 4 * std::sqrt((C(i, i) * C(j, j) + C(i, j) * C(i, j)) / n));
            }
        }
    }
}

TEST_CASE("batch files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "onsl_batch_io_test";
    std::filesystem::create_directories(dir);
    SamplerConfig cfg{build_time_grid(0.05, 3.0, 0.2), make_exact_score(two_component_mixture_1d()), 50, 8,
                      Variant::ode_noise, 1};
    SampleBatch batch = run_algorithm1(cfg);
    write_batch_csv(dir / "b.csv", batch);
    write_batch_binary(dir / "b.bin", batch);
    const SampleBatch csv = read_batch_csv(dir / "b.csv");
    CHECK(max_abs_diff(csv.points, batch.points) == 0.0);
    CHECK(csv.at_time == batch.at_time);
    CHECK(csv.config_hash == batch.config_hash);
    const SampleBatch bin = read_batch_binary(dir / "b.bin");
    CHECK(max_abs_diff(bin.points, batch.points) == 0.0);
    CHECK(std::isnan(bin.at_time));
    CHECK(std::filesystem::file_size(dir / "b.bin") == 4 + 2 + 4 + 8 + 50 * 8);
    std::filesystem::remove_all(dir);
}
