// Acceptance suite: one PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include "onsl/experiment.hpp"
#include "onsl/hash.hpp"
#include "onsl/propagation.hpp"
#include "onsl/validator.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace onsl;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = true;
    std::string detail;
    std::string numbers;  // canonical numeric output, compared by the determinism criterion
    double seconds = 0.0;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

json gaussian_json(int d, double shift) {
    json mean = json::array(), cov = json::array();
    for (int i = 0; i < d; ++i) {
        mean.push_back(i == 0 ? shift : 0.0);
        json row = json::array();
        for (int j = 0; j < d; ++j) row.push_back(i == j ? 1.0 : 0.0);
        cov.push_back(row);
    }
    return {{"type", "mixture"}, {"weights", {1.0}}, {"means", {mean}}, {"covs", {cov}}};
}

const std::vector<std::size_t> kRateKs{25, 50, 100, 200, 400, 800};

ExperimentConfig rate_config(Variant v, unsigned workers) {
    ExperimentConfig cfg = ExperimentConfig::from_json({{"distribution", gaussian_json(4, 3.0)},
                                                        {"grid", {{"delta", 1e-2}, {"T", 12.0}, {"K_list", kRateKs}}},
                                                        {"variants", {to_string(v)}}});
    cfg.workers = workers;
    return cfg;
}

std::string sweep_numbers(const SweepReport& rep) { return rep.to_json().dump(); }

std::string describe_points(const SweepReport& rep) {
    std::ostringstream os;
    for (const auto& p : rep.points) os << " K=" << p.K << ":kl=" << fmt(p.kl) << ",corr=" << fmt(p.corrected);
    if (!rep.fits.empty()) os << " floor=" << fmt(rep.fits.front().floor) << "@K=" << rep.fits.front().floor_K;
    for (const auto& w : rep.warnings) os << " [warning: " << w << "]";
    return os.str();
}

void gate_runtime(Outcome& o, double limit) {
    const bool ok = o.seconds < limit;
    o.detail += " runtime=" + fmt(o.seconds) + "s (limit " + fmt(limit) + "s)";
    if (!ok) o.passed = false;
}

template <class F>
Outcome timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = f();
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

std::optional<double> ode_noise_slope;  // shared by criteria 1 and 2

Outcome criterion1(unsigned workers) {
    Outcome o = timed([&] {
        Outcome r;
        const SweepReport rep = run_sweep(rate_config(Variant::ode_noise, workers));
        r.numbers = sweep_numbers(rep);
        const VariantFit& f = rep.fit_for(Variant::ode_noise);
        if (f.fit) {
            ode_noise_slope = f.fit->slope;
            const bool ok = f.fit->slope >= -2.6 && f.fit->slope <= -1.6 && f.fit->r_squared >= 0.95;
            r.passed = ok;
            r.detail = "slope=" + fmt(f.fit->slope) + " in [-2.6, -1.6], R2=" + fmt(f.fit->r_squared) + " >= 0.95";
        } else {
            ode_noise_slope.reset();
            r.passed = false;
            r.detail = "no fit: " + f.error;
        }
        r.detail += ";" + describe_points(rep);
        return r;
    });
    gate_runtime(o, 10.0);
    return o;
}

Outcome criterion2(unsigned workers) {
    Outcome o = timed([&] {
        Outcome r;
        const SweepReport rep = run_sweep(rate_config(Variant::ei_sde, workers));
        r.numbers = sweep_numbers(rep);
        const VariantFit& f = rep.fit_for(Variant::ei_sde);
        if (!f.fit) {
            r.passed = false;
            r.detail = "no fit: " + f.error;
        } else {
            const double s = f.fit->slope;
            bool ok = s >= -1.5 && s <= -0.6 && f.fit->r_squared >= 0.9;
            r.detail = "slope=" + fmt(s) + " in [-1.5, -0.6], R2=" + fmt(f.fit->r_squared) + " >= 0.9";
            if (ode_noise_slope) {
                ok = ok && s - *ode_noise_slope >= 0.5;
                r.detail += ", shallower by " + fmt(s - *ode_noise_slope) + " >= 0.5";
            } else {
                ok = false;
                r.detail += ", contrast unavailable (two-phase sweep has no fit)";
            }
            r.passed = ok;
        }
        r.detail += ";" + describe_points(rep);
        return r;
    });
    gate_runtime(o, 10.0);
    return o;
}

Outcome criterion3(unsigned) {
    Outcome o = timed([] {
        Outcome r;
        double worst = 0.0;
        std::ostringstream nums;
        nums.precision(17);
        for (int d : {1, 4, 16}) {
            const DataLaw law = GaussianMixture::from_law(GaussianLaw::standard(d));
            const auto s = make_exact_score(law);
            for (std::size_t K : {50, 200, 800}) {
                const TimeGrid grid = grid_from_iterations(1e-2, 12.0, K).grid;
                const double kl = kl_gaussian(GaussianLaw::standard(d), propagate_algorithm1_gaussian(grid, *s));
                worst = std::max(worst, kl);
                nums << kl << ';';
            }
        }
        r.numbers = nums.str();
        r.passed = worst < 1e-12;
        r.detail = "max KL(N(0,I) || propagated)=" + fmt(worst) + " < 1e-12 over d in {1,4,16}, K in {50,200,800}";
        return r;
    });
    gate_runtime(o, 1.0);
    return o;
}

Outcome criterion4(unsigned workers) {
    Outcome o = timed([&] {
        Outcome r;
        ExperimentConfig cfg = ExperimentConfig::from_json({{"distribution", gaussian_json(4, 3.0)},
                                                            {"grid", {{"delta", 1e-2}, {"T", 12.0}, {"K", 400}}},
                                                            {"variants", {"ode-noise"}},
                                                            {"perturbation", "constant-bias"},
                                                            {"eps_list", {0.01, 0.02, 0.04, 0.08}}});
        cfg.workers = workers;
        const SweepReport rep = run_sweep(cfg);
        r.numbers = sweep_numbers(rep);
        const VariantFit& f = rep.fit_for(Variant::ode_noise);
        if (!f.fit) {
            r.passed = false;
            r.detail = "no fit: " + f.error;
        } else {
            r.passed = f.fit->r_squared >= 0.9;
            r.detail = "through-origin fit of corrected KL vs eps^2: slope=" + fmt(f.fit->slope) +
                       ", R2=" + fmt(f.fit->r_squared) + " >= 0.9";
        }
        std::ostringstream os;
        for (const auto& p : rep.points) os << " eps2=" << fmt(p.eps_score * p.eps_score) << ":corr=" << fmt(p.corrected);
        r.detail += ";" + os.str();
        return r;
    });
    gate_runtime(o, 5.0);
    return o;
}

Outcome suite_outcome(const std::vector<CheckReport>& reports) {
    Outcome r;
    std::size_t failed = 0;
    json all = json::array();
    std::string first_failure;
    for (const auto& c : reports) {
        all.push_back(c.to_json());
        if (!c.passed) {
            ++failed;
            if (first_failure.empty()) first_failure = c.summary_line();
        }
    }
    r.numbers = all.dump();
    r.passed = failed == 0 && !reports.empty();
    r.detail = std::to_string(reports.size() - failed) + "/" + std::to_string(reports.size()) + " checks pass";
    if (!first_failure.empty()) r.detail += "; first failure: " + first_failure;
    return r;
}

SuiteConfig suite(unsigned workers) {
    SuiteConfig cfg;
    cfg.workers = workers;
    return cfg;
}

Outcome criterion5(unsigned workers) {
    Outcome o = timed([&] {
        const auto reports = run_identity_checks(suite(workers));
        Outcome r = suite_outcome(reports);
        double closed = 0.0, mixture = 0.0;
        for (const auto& c : reports) {
            for (const auto& m : c.measured) {
                if (m.label == "relative_residual_closed") closed = std::max(closed, m.value);
                if (m.label == "relative_residual_mc") mixture = std::max(mixture, m.value);
            }
        }
        r.detail += " (max closed-form residual " + fmt(closed) + " <= 1e-8, max mixture residual " + fmt(mixture) +
                    " <= 1e-2)";
        return r;
    });
    gate_runtime(o, 60.0);
    return o;
}

Outcome criterion6(unsigned workers) {
    Outcome o = timed([&] {
        const auto reports = run_bound_checks(suite(workers));
        Outcome r = suite_outcome(reports);
        double eq = 0.0;
        for (const auto& c : reports)
            for (const auto& m : c.measured)
                if (m.label == "point_mass_equality_relative") eq = std::max(eq, m.value);
        r.detail += " (max point-mass equality deviation " + fmt(eq) + " <= 1e-3)";
        return r;
    });
    gate_runtime(o, 60.0);
    return o;
}

Outcome criterion7(unsigned workers) {
    Outcome o = timed([&] {
        std::vector<CheckReport> reports;
        for (auto& c : run_remainder_checks(suite(workers), true))
            if (c.name.find("N(3,1)") != std::string::npos) reports.push_back(std::move(c));
        Outcome r = suite_outcome(reports);
        if (reports.size() != 3) {
            r.passed = false;
            r.detail += ", expected three interior steps";
        }
        std::ostringstream os;
        for (const auto& c : reports)
            os << " " << c.name << ":lhs/rhs=" << fmt(c.value("lhs_over_rhs"))
               << ",halving=" << fmt(c.value("halving_ratio_mc")) << " (closed " << fmt(c.value("halving_ratio_closed"))
               << ")";
        r.detail += ", halving ratio required in [6, 10];" + os.str();
        return r;
    });
    gate_runtime(o, 30.0);
    return o;
}

using Criterion = std::function<Outcome(unsigned)>;

void print(int id, const Outcome& o) {
    std::printf("CRITERION %d %s  %s\n", id, o.passed ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
}

// Context for criteria 1 and 2 on an anisotropic Gaussian (covariance
// diag(0.25, 0.5, 2, 4)), where the two-phase step is not exact: chain-rule
// step terms and exact marginal KL per K. Not gated.
void print_anisotropic_info() {
    Matrix cov = Matrix::Zero(4, 4);
    cov.diagonal() << 0.25, 0.5, 2.0, 4.0;
    const GaussianLaw p_data(Vector::Unit(4, 0) * 3.0, cov);
    const DataLaw law = GaussianMixture::from_law(p_data);
    const auto s = make_exact_score(law);
    for (const Variant v : {Variant::ode_noise, Variant::ei_sde}) {
        std::vector<double> ks, steps, marg;
        std::ostringstream os;
        for (std::size_t K : kRateKs) {
            std::optional<GridSolution> sol;
            try {
                sol = grid_from_iterations(1e-2, 12.0, K);
            } catch (const GridError&) {
                continue;
            }
            const ChainRuleKl kl = v == Variant::ode_noise ? chain_rule_kl_algorithm1(p_data, sol->grid, *s)
                                                            : chain_rule_kl_ei_sde(p_data, sol->grid, *s);
            const double exact = kl_gaussian(p_data.forward_marginal(sol->grid.t(1)), propagate_gaussian(v, sol->grid, *s));
            ks.push_back(static_cast<double>(K));
            steps.push_back(kl.total - kl.init);
            marg.push_back(exact);
            os << " K=" << K << ":steps=" << fmt(kl.total - kl.init) << ",marginal=" << fmt(exact);
        }
        const auto slope = [](const std::vector<double>& x, const std::vector<double>& y) {
            try {
                return fmt(fit_log_log(x, y).slope);
            } catch (const Error&) {
                return std::string("n/a");
            }
        };
        std::printf("INFO anisotropic %s: chain-rule step slope=%s, marginal KL slope=%s;%s\n", to_string(v).c_str(),
                    slope(ks, steps).c_str(), slope(ks, marg).c_str(), os.str().c_str());
    }
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{criterion1, criterion2, criterion3, criterion4,
                                          criterion5, criterion6, criterion7};
    std::vector<Outcome> first;
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        first.push_back(criteria[i](1));
        print(static_cast<int>(i + 1), first.back());
        all = all && first.back().passed;
    }

    // Determinism: a second run with the same seeds, and a run with 8 workers.
    Outcome det;
    det.passed = true;
    std::ostringstream os;
    for (unsigned workers : {1u, 8u}) {
        for (std::size_t i = 0; i < criteria.size(); ++i) {
            const Outcome again = criteria[i](workers);
            const bool same = again.numbers == first[i].numbers;
            if (!same) {
                det.passed = false;
                os << " criterion " << i + 1 << " differs with workers=" << workers << ";";
            }
        }
    }
    Fnv1a digest;
    for (const auto& o : first) digest.string(o.numbers);
    det.detail = "numeric outputs of criteria 1-7 identical across two runs (workers=1) and workers=8; digest=" +
                 hex64(digest.digest()) + os.str();
    print(8, det);
    all = all && det.passed;

    print_anisotropic_info();
    std::printf("%s\n", all ? "ACCEPTANCE: ALL PASS" : "ACCEPTANCE: FAILURES PRESENT");
    return all ? 0 : 1;
}
