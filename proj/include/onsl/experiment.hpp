#pragma once

// Experiment configuration and the commands behind the CLI: validation
// suite, single sampling runs, convergence sweeps and rate re-fitting.

#include "onsl/distributions.hpp"
#include "onsl/metrics.hpp"
#include "onsl/process.hpp"
#include "onsl/sampler.hpp"
#include "onsl/score_field.hpp"
#include "onsl/validator.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace onsl {

inline constexpr const char* kToolVersion = "0.1.0";

struct GridSpec {
    double delta = 1e-2;
    double T = 10.0;
    std::optional<double> c;
    std::optional<std::size_t> K;
    std::vector<std::size_t> K_list;
};

struct ExperimentConfig {
    std::optional<nlohmann::json> distribution;  // inline law description (paths are resolved at load)
    GridSpec grid;
    std::vector<Variant> variants{Variant::ode_noise};
    double eps_score = 0.0;
    std::vector<double> eps_list;  // eps sweep at a single K when non-empty
    PerturbMode perturbation = PerturbMode::constant_bias;
    std::size_t calibration_mc = 4000;
    std::size_t n_samples = 10000;
    std::uint64_t seed = 20240601;
    std::filesystem::path output_dir = "out";
    unsigned workers = 1;
    bool estimator_path = false;  // sample + kNN sweep for laws without exact propagation
    int knn_k = 5;
    double floor_multiplier = 8.0;
    SuiteConfig validation;

    /// Parses and validates; unknown keys are rejected. Relative distribution
    /// paths are resolved against `base_dir`.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

    // Everything that determines numeric output (excludes output_dir and workers).
    nlohmann::json canonical_json() const;
    std::uint64_t hash() const;

    DataLaw data_law() const;  // throws ConfigError when no distribution is configured
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct SweepPoint {
    Variant variant = Variant::ode_noise;
    std::size_t K = 0;
    double c = 0.0;
    int d = 0;
    double eps_score = 0.0;
    double kl = 0.0;
    double floor = 0.0;
    double corrected = 0.0;
    bool at_boundary = false;
    double std_error = 0.0;  // estimator path only
};

struct VariantFit {
    Variant variant;
    std::optional<RateFit> fit;  // log-log slope in K, or through-origin slope in eps^2
    std::string error;           // why no fit exists
    double floor = 0.0;
    std::size_t floor_K = 0;
};

struct SweepReport {
    bool eps_mode = false;
    std::vector<SweepPoint> points;
    std::vector<VariantFit> fits;
    std::vector<std::string> warnings;
    std::uint64_t config_hash = 0;

    nlohmann::json to_json() const;
    const VariantFit& fit_for(Variant v) const;
};

/// Exact-law KL(p_{t_1} || sampler law at t_1) for Gaussian data and an affine
/// (exact or perturbed) score.
double exact_sweep_kl(const GaussianLaw& p_data, Variant variant, const TimeGrid& grid, PerturbMode mode,
                      double eps, std::uint64_t seed, std::size_t calibration_mc);

/// Runs the sweep described by cfg (K list, or eps list at one K) without
/// touching the file system. Grid failures are skipped with a warning.
SweepReport run_sweep(const ExperimentConfig& cfg);

void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report);

struct RateFitInput {
    std::vector<std::filesystem::path> csv_paths;
    std::optional<double> floor_override;
    bool force = false;
};

struct RateFitResult {
    std::vector<VariantFit> fits;
    std::vector<SweepPoint> points;
    std::uint64_t config_hash = 0;
    bool eps_mode = false;
};

RateFitResult refit_sweep_csv(const RateFitInput& input);

// Commands: write outputs under cfg.output_dir, log to `log`, return the exit code.
int cmd_validate(const ExperimentConfig& cfg, std::ostream& log);
int cmd_sample(const ExperimentConfig& cfg, std::ostream& log);
int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log);
int cmd_rate_fit(const RateFitInput& input, const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace onsl
