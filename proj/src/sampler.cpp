#include "onsl/sampler.hpp"

#include "onsl/hash.hpp"
#include "onsl/parallel.hpp"
#include "onsl/rng.hpp"

#include <cmath>
#include <cstring>
#include <memory>

namespace onsl {
namespace {

constexpr std::uint64_t kInitStream = 0;

void check_step_index(std::size_t k, const TimeGrid& grid, std::size_t lowest) {
    if (k < lowest || k > grid.K() + 1) throw InvalidArgument("sampler step index out of range");
}

// Two-phase update with a score slice already frozen at t_k.
void ode_noise_update(Vector& x, double h_k, double h_prev, const ScoreSlice& slice, ScoreEval& ev,
                      const Vector& noise) {
    const double em1 = std::expm1(h_k + h_prev);
    slice.evaluate(x, DerivLevel::score, ev);
    x += em1 * (x + ev.score);
    x *= std::exp(-h_prev);
    x.noalias() += std::sqrt(-std::expm1(-2.0 * h_prev)) * noise;
}

void ei_sde_update(Vector& x, double h, const ScoreSlice& slice, ScoreEval& ev, const Vector& noise) {
    const double em1 = std::expm1(h);
    slice.evaluate(x, DerivLevel::score, ev);
    x += em1 * x + 2.0 * em1 * ev.score;
    x.noalias() += std::sqrt(std::expm1(2.0 * h)) * noise;
}

void pf_ode_update(Vector& x, double h, const ScoreSlice& slice, ScoreEval& ev) {
    const double em1 = std::expm1(h);
    slice.evaluate(x, DerivLevel::score, ev);
    x += em1 * (x + ev.score);
}

SampleBatch run_variant(const SamplerConfig& cfg, Variant variant) {
    validate(cfg);
    if (cfg.variant != variant) throw InvalidArgument("sampler called with a config for another variant");
    const TimeGrid& grid = cfg.grid;
    const ScoreField& field = *cfg.score;
    const int d = field.dim();
    const std::size_t top = grid.K() + 1;

    std::vector<std::unique_ptr<const ScoreSlice>> slices(top + 1);
    for (std::size_t k = 2; k <= top; ++k) slices[k] = field.at(grid.t(k));

    SampleBatch batch;
    batch.points.resize(static_cast<Eigen::Index>(cfg.n_samples), d);
    batch.at_time = grid.t(1);
    batch.config_hash = config_hash(cfg);

    parallel_for(cfg.n_samples, cfg.workers, [&](std::size_t begin, std::size_t end) {
        Vector x(d), noise(d);
        ScoreEval ev;
        const std::span<double> noise_span(noise.data(), static_cast<std::size_t>(d));
        for (std::size_t i = begin; i < end; ++i) {
            CounterRng init(cfg.seed, i, kInitStream);
            init.fill_normal({x.data(), static_cast<std::size_t>(d)});
            for (std::size_t k = top; k >= 2; --k) {
                switch (variant) {
                    case Variant::ode_noise: {
                        CounterRng rng(cfg.seed, i, k);
                        rng.fill_normal(noise_span);
                        ode_noise_update(x, grid.h(k), grid.h(k - 1), *slices[k], ev, noise);
                        break;
                    }
                    case Variant::ei_sde: {
                        CounterRng rng(cfg.seed, i, k);
                        rng.fill_normal(noise_span);
                        ei_sde_update(x, grid.h(k), *slices[k], ev, noise);
                        break;
                    }
                    case Variant::pf_ode:
                        pf_ode_update(x, grid.h(k), *slices[k], ev);
                        break;
                }
            }
            batch.points.row(static_cast<Eigen::Index>(i)) = x.transpose();
        }
    });
    if (!batch.points.allFinite()) throw Error("sampler produced non-finite values");
    return batch;
}

}  // namespace

Variant variant_from_string(const std::string& s) {
    if (s == "ode-noise") return Variant::ode_noise;
    if (s == "ei-sde") return Variant::ei_sde;
    if (s == "pf-ode") return Variant::pf_ode;
    throw InvalidArgument("unknown sampler variant: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::ode_noise: return "ode-noise";
        case Variant::ei_sde: return "ei-sde";
        case Variant::pf_ode: return "pf-ode";
    }
    return "?";
}

void validate(const SamplerConfig& cfg) {
    if (cfg.n_samples == 0) throw InvalidArgument("n_samples must be >= 1");
    if (cfg.grid.K() < 2) throw InvalidArgument("sampler grid needs K >= 2");
    if (!cfg.score) throw InvalidArgument("sampler config has no score field");
    if (cfg.score->space() != Space::x) throw InvalidArgument("sampler needs an x-space score field");
}

std::uint64_t config_hash(const SamplerConfig& cfg) {
    Fnv1a h;
    for (double t : cfg.grid.times()) h.value(t);
    h.value(cfg.grid.c());
    h.string(cfg.score ? cfg.score->describe() : std::string());
    h.value(static_cast<std::uint64_t>(cfg.n_samples));
    h.value(cfg.seed);
    h.string(to_string(cfg.variant));
    return h.digest();
}

Vector ode_noise_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat,
                      const Vector& noise) {
    check_step_index(k, grid, 2);
    if (x_k.size() != noise.size()) throw InvalidArgument("ode_noise_step: dimension mismatch");
    Vector x = x_k;
    ScoreEval ev;
    ode_noise_update(x, grid.h(k), grid.h(k - 1), *s_hat.at(grid.t(k)), ev, noise);
    return x;
}

Vector ei_sde_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat,
                   const Vector& noise) {
    check_step_index(k, grid, 1);
    if (x_k.size() != noise.size()) throw InvalidArgument("ei_sde_step: dimension mismatch");
    Vector x = x_k;
    ScoreEval ev;
    ei_sde_update(x, grid.h(k), *s_hat.at(grid.t(k)), ev, noise);
    return x;
}

Vector pf_ode_step(const Vector& x_k, std::size_t k, const TimeGrid& grid, const ScoreField& s_hat) {
    check_step_index(k, grid, 1);
    Vector x = x_k;
    ScoreEval ev;
    pf_ode_update(x, grid.h(k), *s_hat.at(grid.t(k)), ev);
    return x;
}

std::vector<StepTimes> algorithm1_schedule(const TimeGrid& grid) {
    std::vector<StepTimes> out;
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        out.push_back({k, grid.t(k), grid.t(k - 2), grid.t(k - 1)});
    }
    return out;
}

SampleBatch run_algorithm1(const SamplerConfig& cfg) { return run_variant(cfg, Variant::ode_noise); }
SampleBatch run_ei_sde_baseline(const SamplerConfig& cfg) { return run_variant(cfg, Variant::ei_sde); }
SampleBatch run_pf_ode(const SamplerConfig& cfg) { return run_variant(cfg, Variant::pf_ode); }
SampleBatch run_sampler(const SamplerConfig& cfg) { return run_variant(cfg, cfg.variant); }

}  // namespace onsl
