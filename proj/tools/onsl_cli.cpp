// Command-line front end: onsl [global flags] validate|sample|sweep|rate-fit

#include "onsl/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kUsageError = 2;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Numerical laboratory for two-phase diffusion samplers"};
    app.set_version_flag("--version", onsl::kToolVersion);
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<unsigned> workers;
    app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "Run the identity and bound validation suite");
    auto* sample = app.add_subcommand("sample", "Draw a batch with one sampler");
    auto* sweep = app.add_subcommand("sweep", "KL-vs-K (or eps) sweep with floor correction and rate fit");
    auto* rate_fit = app.add_subcommand("rate-fit", "Re-fit the rate exponent of existing sweep CSVs");
    std::vector<std::string> csvs;
    std::optional<double> floor;
    bool force = false;
    rate_fit->add_option("csv", csvs, "Sweep CSV files")->required()->check(CLI::ExistingFile);
    rate_fit->add_option("--floor", floor, "Floor value to subtract instead of the stored one");
    rate_fit->add_flag("--force", force, "Combine files with different config hashes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (rate_fit->parsed()) {
            onsl::RateFitInput input;
            for (const auto& c : csvs) input.csv_paths.emplace_back(c);
            input.floor_override = floor;
            input.force = force;
            return onsl::cmd_rate_fit(input, std::filesystem::path(out_dir.empty() ? "out" : out_dir), std::cout);
        }
        onsl::ExperimentConfig cfg =
            config_path.empty() ? onsl::ExperimentConfig{} : onsl::load_experiment_config(config_path);
        if (seed) {
            cfg.seed = *seed;
            cfg.validation.seed = *seed;
        }
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (workers) cfg.workers = *workers;
        if (validate->parsed()) return onsl::cmd_validate(cfg, std::cout);
        if (sample->parsed()) return onsl::cmd_sample(cfg, std::cout);
        if (sweep->parsed()) return onsl::cmd_sweep(cfg, std::cout);
    } catch (const onsl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kUsageError;
}
