#include "onsl/experiment.hpp"

#include "onsl/batch_io.hpp"
#include "onsl/hash.hpp"
#include "onsl/parallel.hpp"
#include "onsl/propagation.hpp"
#include "onsl/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace onsl {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kScoreStream = 0x5C0E;
constexpr std::uint64_t kSamplerStream = 0x5A3F;
constexpr std::uint64_t kReferenceStream = 0x4EF0;
constexpr const char* kSweepColumns = "variant,K,c,d,eps_score,kl_nats,floor_nats,corrected_nats";

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Writes through a temporary file and a rename so readers never see partial output.
void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw Error("cannot write " + tmp.string());
        os << content;
        if (!os) throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

template <class T>
T get_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "' has the wrong type: " + e.what());
    }
}

GridSpec parse_grid(const json& j) {
    if (!j.is_object()) throw ConfigError("'grid' must be an object");
    GridSpec g;
    for (const auto& [key, val] : j.items()) {
        if (key == "delta") g.delta = get_as<double>(val, "grid.delta");
        else if (key == "T") g.T = get_as<double>(val, "grid.T");
        else if (key == "c") g.c = get_as<double>(val, "grid.c");
        else if (key == "K") g.K = get_as<std::size_t>(val, "grid.K");
        else if (key == "K_list") g.K_list = get_as<std::vector<std::size_t>>(val, "grid.K_list");
        else throw ConfigError("unknown key in grid: " + key);
    }
    if (!(g.delta > 0.0 && g.delta < 1.0)) throw ConfigError("grid.delta must lie in (0, 1)");
    if (!(g.T >= 1.0)) throw ConfigError("grid.T must be >= 1");
    if (g.c && !(*g.c > 0.0 && *g.c < 0.5)) throw ConfigError("grid.c must lie in (0, 1/2)");
    const int modes = (g.c ? 1 : 0) + (g.K ? 1 : 0) + (g.K_list.empty() ? 0 : 1);
    if (modes > 1) throw ConfigError("grid takes only one of c, K, K_list");
    return g;
}

json grid_spec_json(const GridSpec& g) {
    json j{{"delta", g.delta}, {"T", g.T}};
    if (g.c) j["c"] = *g.c;
    if (g.K) j["K"] = *g.K;
    if (!g.K_list.empty()) j["K_list"] = g.K_list;
    return j;
}

TimeGrid grid_for_sample(const GridSpec& g) {
    if (g.c) return build_time_grid(g.delta, g.T, *g.c);
    if (g.K) return grid_from_iterations(g.delta, g.T, *g.K).grid;
    if (g.K_list.size() == 1) return grid_from_iterations(g.delta, g.T, g.K_list.front()).grid;
    throw ConfigError("sampling needs grid.c or a single grid.K");
}

std::optional<GaussianLaw> as_single_gaussian(const DataLaw& law) {
    const auto* gm = std::get_if<GaussianMixture>(&law);
    if (!gm || gm->size() != 1) return std::nullopt;
    return GaussianLaw(gm->means().front(), gm->covs().front());
}

ScoreFieldPtr make_estimate(const DataLaw& law, const TimeGrid& grid, PerturbMode mode, double eps,
                            std::uint64_t seed, std::size_t calibration_mc) {
    ScoreFieldPtr base = make_exact_score(law, Space::x);
    if (eps == 0.0) return base;
    return perturb_score(base, mode, eps, grid, stream_key(seed, kScoreStream), &law, calibration_mc);
}

json law_json(const GaussianLaw& g) {
    json cov = json::array();
    for (Eigen::Index i = 0; i < g.cov().rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < g.cov().cols(); ++j) row.push_back(g.cov()(i, j));
        cov.push_back(row);
    }
    return {{"mean", std::vector<double>(g.mean().data(), g.mean().data() + g.mean().size())}, {"cov", cov}};
}

json fit_json(const VariantFit& f) {
    json j{{"variant", to_string(f.variant)}, {"floor_nats", f.floor}, {"floor_K", f.floor_K}};
    if (f.fit) {
        j["slope"] = f.fit->slope;
        j["intercept"] = f.fit->intercept;
        j["r_squared"] = f.fit->r_squared;
        j["n"] = f.fit->n;
    } else {
        j["error"] = f.error;
    }
    return j;
}

json point_json(const SweepPoint& p) {
    return {{"variant", to_string(p.variant)}, {"K", p.K},           {"c", p.c},
            {"d", p.d},                         {"eps_score", p.eps_score}, {"kl_nats", p.kl},
            {"floor_nats", p.floor},            {"corrected_nats", p.corrected}, {"at_boundary", p.at_boundary},
            {"std_error", p.std_error}};
}

std::string record_name(const SweepPoint& p) {
    std::ostringstream os;
    os << to_string(p.variant) << "_K" << p.K << "_eps" << fmt17(p.eps_score) << ".json";
    return os.str();
}

// Fits each variant's points: log-log in K, or through the origin in eps^2.
std::vector<VariantFit> fit_points(const std::vector<SweepPoint>& points, const std::vector<Variant>& variants,
                                   bool eps_mode, const std::map<Variant, std::pair<double, std::size_t>>& floors) {
    std::vector<VariantFit> fits;
    for (Variant v : variants) {
        VariantFit vf{v, std::nullopt, {}, 0.0, 0};
        if (auto it = floors.find(v); it != floors.end()) {
            vf.floor = it->second.first;
            vf.floor_K = it->second.second;
        }
        std::vector<double> xs, ys;
        std::ostringstream bad;
        for (const auto& p : points) {
            if (p.variant != v) continue;
            if (eps_mode) {
                xs.push_back(p.eps_score * p.eps_score);
                ys.push_back(p.corrected);
            } else {
                if (!(p.corrected > 0.0)) bad << " K=" << p.K << " (" << fmt17(p.corrected) << ")";
                xs.push_back(static_cast<double>(p.K));
                ys.push_back(p.corrected);
            }
        }
        try {
            if (!bad.str().empty()) throw InvalidArgument("floor-corrected KL is nonpositive at" + bad.str());
            vf.fit = eps_mode ? fit_through_origin(xs, ys) : fit_log_log(xs, ys);
        } catch (const Error& e) {
            vf.error = e.what();
        }
        fits.push_back(vf);
    }
    return fits;
}

double estimator_kl(const DataLaw& law, Variant variant, const TimeGrid& grid, const ScoreFieldPtr& s_hat,
                    const ExperimentConfig& cfg, double& std_error) {
    SamplerConfig sc{grid, s_hat, cfg.n_samples, stream_key(cfg.seed, kSamplerStream, grid.K()), variant,
                     cfg.workers};
    const SampleBatch gen = run_sampler(sc);
    const DataSampler sampler(law);
    RowMatrix ref(static_cast<Eigen::Index>(cfg.n_samples), dim(law));
    Vector y, noise(dim(law));
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        CounterRng rng(stream_key(cfg.seed, kReferenceStream, grid.K()), i);
        sampler.draw(rng, y);
        rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
        ref.row(static_cast<Eigen::Index>(i)) = forward_sample(y, grid.t(1), noise).transpose();
    }
    KnnOptions opts;
    opts.seed = cfg.seed;
    const KnnKlResult r = knn_kl_estimate(ref, gen.points, cfg.knn_k, opts);
    std_error = r.std_error;
    return r.estimate;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    bool seed_given = false;
    for (const auto& [key, val] : j.items()) {
        if (key == "distribution") {
            if (val.is_string()) {
                fs::path p = val.get<std::string>();
                if (p.is_relative()) p = base_dir / p;
                c.distribution = data_law_to_json(load_data_law(p));
            } else {
                c.distribution = data_law_to_json(data_law_from_json(val));
            }
        } else if (key == "grid") {
            c.grid = parse_grid(val);
        } else if (key == "variant") {
            c.variants = {variant_from_string(get_as<std::string>(val, key))};
        } else if (key == "variants") {
            c.variants.clear();
            for (const auto& s : get_as<std::vector<std::string>>(val, key)) c.variants.push_back(variant_from_string(s));
            if (c.variants.empty()) throw ConfigError("'variants' must not be empty");
        } else if (key == "eps_score") {
            c.eps_score = get_as<double>(val, key);
        } else if (key == "eps_list") {
            c.eps_list = get_as<std::vector<double>>(val, key);
        } else if (key == "perturbation") {
            c.perturbation = perturb_mode_from_string(get_as<std::string>(val, key));
        } else if (key == "calibration_mc") {
            c.calibration_mc = get_as<std::size_t>(val, key);
        } else if (key == "n_samples") {
            c.n_samples = get_as<std::size_t>(val, key);
        } else if (key == "seed") {
            c.seed = get_as<std::uint64_t>(val, key);
            seed_given = true;
        } else if (key == "output_dir") {
            c.output_dir = get_as<std::string>(val, key);
        } else if (key == "workers") {
            c.workers = get_as<unsigned>(val, key);
        } else if (key == "estimator_path") {
            c.estimator_path = get_as<bool>(val, key);
        } else if (key == "knn_k") {
            c.knn_k = get_as<int>(val, key);
        } else if (key == "floor_multiplier") {
            c.floor_multiplier = get_as<double>(val, key);
        } else if (key == "validation") {
            try {
                c.validation = SuiteConfig::from_json(val);
            } catch (const json::exception& e) {
                throw ConfigError(std::string("bad validation config: ") + e.what());
            }
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    if (seed_given) c.validation.seed = c.seed;
    if (c.n_samples == 0) throw ConfigError("n_samples must be >= 1");
    if (c.workers == 0) throw ConfigError("workers must be >= 1");
    if (!(c.eps_score >= 0.0)) throw ConfigError("eps_score must be >= 0");
    for (double e : c.eps_list)
        if (!(e >= 0.0)) throw ConfigError("eps_list entries must be >= 0");
    if (c.knn_k < 1) throw ConfigError("knn_k must be >= 1");
    if (!(c.floor_multiplier > 1.0)) throw ConfigError("floor_multiplier must be > 1");
    if (c.calibration_mc < 2) throw ConfigError("calibration_mc must be >= 2");
    return c;
}

json ExperimentConfig::canonical_json() const {
    json vs = json::array();
    for (Variant v : variants) vs.push_back(to_string(v));
    json j{{"grid", grid_spec_json(grid)},
           {"variants", vs},
           {"eps_score", eps_score},
           {"eps_list", eps_list},
           {"perturbation", to_string(perturbation)},
           {"calibration_mc", calibration_mc},
           {"n_samples", n_samples},
           {"seed", seed},
           {"estimator_path", estimator_path},
           {"knn_k", knn_k},
           {"floor_multiplier", floor_multiplier},
           {"validation", validation.to_json()}};
    j["distribution"] = distribution ? *distribution : json(nullptr);
    return j;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical_json().dump()); }

DataLaw ExperimentConfig::data_law() const {
    if (!distribution) throw ConfigError("config has no 'distribution'");
    return data_law_from_json(*distribution);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j, path.parent_path());
}

json SweepReport::to_json() const {
    json pts = json::array(), fs_ = json::array();
    for (const auto& p : points) pts.push_back(point_json(p));
    for (const auto& f : fits) fs_.push_back(fit_json(f));
    return {{"schema", "onsl.sweep_report/1"},
            {"tool_version", kToolVersion},
            {"config_hash", hex64(config_hash)},
            {"mode", eps_mode ? "eps" : "K"},
            {"points", pts},
            {"fits", fs_},
            {"warnings", warnings}};
}

const VariantFit& SweepReport::fit_for(Variant v) const {
    for (const auto& f : fits)
        if (f.variant == v) return f;
    throw InvalidArgument("no fit for variant " + to_string(v));
}

double exact_sweep_kl(const GaussianLaw& p_data, Variant variant, const TimeGrid& grid, PerturbMode mode, double eps,
                      std::uint64_t seed, std::size_t calibration_mc) {
    const DataLaw law = GaussianMixture::from_law(p_data);
    const ScoreFieldPtr s_hat = make_estimate(law, grid, mode, eps, seed, calibration_mc);
    const GaussianLaw out = propagate_gaussian(variant, grid, *s_hat);
    return kl_gaussian(p_data.forward_marginal(grid.t(1)), out);
}

SweepReport run_sweep(const ExperimentConfig& cfg) {
    SweepReport rep;
    rep.config_hash = cfg.hash();
    rep.eps_mode = !cfg.eps_list.empty();
    const DataLaw law = cfg.data_law();
    const int d = dim(law);
    const auto gaussian = as_single_gaussian(law);
    if (!cfg.estimator_path) {
        if (!gaussian)
            throw ConfigError("exact-law sweep needs a single Gaussian distribution; set estimator_path to opt in "
                              "to the sample-based estimator");
        if (cfg.perturbation == PerturbMode::random_fourier_bias && (cfg.eps_score > 0.0 || rep.eps_mode))
            throw ConfigError("exact-law sweep needs an affine perturbation (constant-bias or relative-scaling)");
    }

    std::vector<std::size_t> Ks = cfg.grid.K_list;
    if (cfg.grid.K) Ks = {*cfg.grid.K};
    if (Ks.empty()) throw ConfigError("sweep needs grid.K_list (or grid.K for an eps sweep)");
    if (rep.eps_mode && Ks.size() != 1) throw ConfigError("an eps sweep needs exactly one K");

    struct Task {
        SweepPoint point;
        std::optional<TimeGrid> grid;
    };
    std::vector<Task> tasks;
    std::map<std::size_t, std::optional<GridSolution>> grids;
    const auto solve = [&](std::size_t K) -> std::optional<GridSolution> {
        if (auto it = grids.find(K); it != grids.end()) return it->second;
        std::optional<GridSolution> sol;
        try {
            sol = grid_from_iterations(cfg.grid.delta, cfg.grid.T, K);
        } catch (const GridError& e) {
            rep.warnings.push_back("skipping K=" + std::to_string(K) + ": " + e.what());
        }
        grids[K] = sol;
        return sol;
    };

    const std::vector<double> eps_values = rep.eps_mode ? cfg.eps_list : std::vector<double>{cfg.eps_score};
    for (Variant v : cfg.variants) {
        for (std::size_t K : Ks) {
            const auto sol = solve(K);
            if (!sol) continue;
            for (double eps : eps_values) {
                SweepPoint p;
                p.variant = v;
                p.K = K;
                p.c = sol->c;
                p.d = d;
                p.eps_score = eps;
                p.at_boundary = sol->at_boundary;
                tasks.push_back({p, sol->grid});
            }
        }
    }

    // Floors: KL at floor_multiplier * K_max (K sweep) or at eps = 0 (eps sweep).
    std::map<Variant, std::pair<double, std::size_t>> floors;
    std::vector<Task> floor_tasks;
    if (rep.eps_mode) {
        if (auto sol = solve(Ks.front())) {
            for (Variant v : cfg.variants) {
                SweepPoint p{v, Ks.front(), sol->c, d, 0.0};
                floor_tasks.push_back({p, sol->grid});
            }
        }
    } else {
        const std::size_t K_max = *std::max_element(Ks.begin(), Ks.end());
        const auto target = static_cast<std::size_t>(std::llround(cfg.floor_multiplier * static_cast<double>(K_max)));
        std::optional<GridSolution> sol;
        std::size_t floor_K = target;
        for (std::size_t off = 0; off <= 4 && !sol; ++off) {
            for (std::size_t cand : {target + off, target - off}) {
                try {
                    sol = grid_from_iterations(cfg.grid.delta, cfg.grid.T, cand);
                    floor_K = cand;
                    break;
                } catch (const GridError&) {
                }
            }
        }
        if (!sol) throw Error("cannot build the floor grid near K = " + std::to_string(target));
        if (floor_K != target)
            rep.warnings.push_back("floor grid uses K=" + std::to_string(floor_K) + " (K=" + std::to_string(target) +
                                   " not solvable)");
        for (Variant v : cfg.variants) {
            SweepPoint p{v, floor_K, sol->c, d, cfg.eps_score};
            floor_tasks.push_back({p, sol->grid});
        }
    }

    const auto evaluate = [&](std::vector<Task>& list) {
        const auto body = [&](Task& task) {
            SweepPoint& p = task.point;
            if (!cfg.estimator_path) {
                p.kl = exact_sweep_kl(*gaussian, p.variant, *task.grid, cfg.perturbation, p.eps_score, cfg.seed,
                                      cfg.calibration_mc);
            } else {
                const ScoreFieldPtr s_hat =
                    make_estimate(law, *task.grid, cfg.perturbation, p.eps_score, cfg.seed, cfg.calibration_mc);
                p.kl = estimator_kl(law, p.variant, *task.grid, s_hat, cfg, p.std_error);
            }
        };
        if (cfg.estimator_path) {
            for (auto& t : list) body(t);
        } else {
            parallel_for(list.size(), cfg.workers, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) body(list[i]);
            });
        }
    };
    evaluate(tasks);
    evaluate(floor_tasks);
    for (const auto& ft : floor_tasks) floors[ft.point.variant] = {ft.point.kl, ft.point.K};

    for (auto& t : tasks) {
        t.point.floor = floors.count(t.point.variant) ? floors[t.point.variant].first : 0.0;
        t.point.corrected = t.point.kl - t.point.floor;
        rep.points.push_back(t.point);
    }
    rep.fits = fit_points(rep.points, cfg.variants, rep.eps_mode, floors);
    return rep;
}

void write_sweep_csv(const fs::path& path, const SweepReport& report) {
    std::ostringstream os;
    os << "# config_hash=" << hex64(report.config_hash) << "\n# tool_version=" << kToolVersion
       << "\n# mode=" << (report.eps_mode ? "eps" : "K") << "\n"
       << kSweepColumns << "\n";
    for (const auto& p : report.points) {
        os << to_string(p.variant) << ',' << p.K << ',' << fmt17(p.c) << ',' << p.d << ',' << fmt17(p.eps_score) << ','
           << fmt17(p.kl) << ',' << fmt17(p.floor) << ',' << fmt17(p.corrected) << '\n';
    }
    write_atomic(path, os.str());
}

RateFitResult refit_sweep_csv(const RateFitInput& input) {
    if (input.csv_paths.empty()) throw ConfigError("rate-fit needs at least one CSV file");
    RateFitResult res;
    std::optional<std::uint64_t> hash;
    std::vector<Variant> order;
    for (const auto& path : input.csv_paths) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open " + path.string());
        std::string line;
        bool header = false;
        std::optional<std::uint64_t> file_hash;
        for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
            if (line.empty()) continue;
            const std::string where = path.string() + ":" + std::to_string(lineno);
            if (line[0] == '#') {
                if (line.rfind("# config_hash=", 0) == 0) file_hash = std::stoull(line.substr(14), nullptr, 16);
                continue;
            }
            if (!header) {
                if (line != kSweepColumns) throw ConfigError(where + ": expected header '" + kSweepColumns + "'");
                header = true;
                continue;
            }
            const auto cells = split_csv(line);
            if (cells.size() != 8) throw ConfigError(where + ": expected 8 columns");
            SweepPoint p;
            try {
                p.variant = variant_from_string(cells[0]);
                p.K = std::stoull(cells[1]);
                p.c = std::stod(cells[2]);
                p.d = std::stoi(cells[3]);
                p.eps_score = std::stod(cells[4]);
                p.kl = std::stod(cells[5]);
                p.floor = std::stod(cells[6]);
                p.corrected = std::stod(cells[7]);
            } catch (const std::exception& e) {
                throw ConfigError(where + ": malformed row (" + e.what() + ")");
            }
            if (input.floor_override) {
                p.floor = *input.floor_override;
                p.corrected = p.kl - p.floor;
            }
            res.points.push_back(p);
            if (std::find(order.begin(), order.end(), p.variant) == order.end()) order.push_back(p.variant);
        }
        if (!header) throw ConfigError(path.string() + ": missing CSV header");
        const std::uint64_t h = file_hash.value_or(0);
        if (hash && *hash != h && !input.force)
            throw ConfigError("config hashes differ between input files (" + hex64(*hash) + " vs " + hex64(h) +
                              "); pass --force to combine them");
        if (!hash) hash = h;
    }
    res.config_hash = hash.value_or(0);
    // An eps sweep has a single K per variant and several eps values.
    res.eps_mode = true;
    for (Variant v : order) {
        std::vector<std::size_t> ks;
        std::vector<double> eps;
        for (const auto& p : res.points) {
            if (p.variant != v) continue;
            ks.push_back(p.K);
            eps.push_back(p.eps_score);
        }
        const bool single_k = std::adjacent_find(ks.begin(), ks.end(), std::not_equal_to<>()) == ks.end();
        const bool varied_eps = std::adjacent_find(eps.begin(), eps.end(), std::not_equal_to<>()) != eps.end();
        if (!(single_k && varied_eps)) res.eps_mode = false;
    }
    if (!res.eps_mode) {
        std::size_t row = 0;
        for (const auto& p : res.points) {
            ++row;
            if (!(p.corrected > 0.0)) {
                throw ConfigError("row " + std::to_string(row) + " (variant " + to_string(p.variant) + ", K=" +
                                  std::to_string(p.K) + ") has nonpositive corrected value " + fmt17(p.corrected));
            }
        }
    }
    std::map<Variant, std::pair<double, std::size_t>> floors;
    for (const auto& p : res.points) floors.emplace(p.variant, std::make_pair(p.floor, std::size_t{0}));
    res.fits = fit_points(res.points, order, res.eps_mode, floors);
    return res;
}

int cmd_validate(const ExperimentConfig& cfg, std::ostream& log) {
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    SuiteConfig suite = cfg.validation;
    suite.workers = cfg.workers;
    const auto reports = run_validation_suite(suite);
    bool all = true;
    json arr = json::array(), timings = json::array();
    std::ostringstream summary;
    for (const auto& r : reports) {
        all = all && r.passed;
        arr.push_back(r.to_json());
        timings.push_back({{"name", r.name}, {"wall_time_s", r.wall_time_s}});
        summary << r.summary_line() << '\n';
    }
    const std::size_t failed = static_cast<std::size_t>(std::count_if(reports.begin(), reports.end(),
                                                                       [](const CheckReport& r) { return !r.passed; }));
    summary << (all ? "ALL PASS" : "FAILURES") << ": " << reports.size() - failed << "/" << reports.size()
            << " checks passed\n";
    log << summary.str();
    const json report{{"schema", "onsl.validation_report/1"},
                      {"tool_version", kToolVersion},
                      {"config_hash", hex64(cfg.hash())},
                      {"suite", suite.to_json()},
                      {"passed", all},
                      {"checks", arr}};
    write_json(cfg.output_dir / "validation_report.json", report);
    write_atomic(cfg.output_dir / "validation_summary.txt", summary.str());
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.output_dir / "validation_metadata.json",
               {{"started_at", started}, {"finished_at", utc_now()}, {"wall_time_s", wall},
                {"workers", cfg.workers}, {"checks", timings}});
    return all ? 0 : 1;
}

int cmd_sample(const ExperimentConfig& cfg, std::ostream& log) {
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    const DataLaw law = cfg.data_law();
    const TimeGrid grid = grid_for_sample(cfg.grid);
    const Variant variant = cfg.variants.front();
    const ScoreFieldPtr s_hat = make_estimate(law, grid, cfg.perturbation, cfg.eps_score, cfg.seed, cfg.calibration_mc);
    SamplerConfig sc{grid, s_hat, cfg.n_samples, stream_key(cfg.seed, kSamplerStream), variant, cfg.workers};
    const SampleBatch batch = run_sampler(sc);
    const double sample_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(cfg.output_dir);
    write_batch_csv(cfg.output_dir / "samples.csv", batch);
    write_batch_binary(cfg.output_dir / "samples.bin", batch);

    json record{{"schema", "onsl.run_record/1"},
                {"tool_version", kToolVersion},
                {"command", "sample"},
                {"config", cfg.canonical_json()},
                {"config_hash", hex64(cfg.hash())},
                {"sampler",
                 {{"variant", to_string(variant)},
                  {"n_samples", cfg.n_samples},
                  {"seed", sc.seed},
                  {"score", s_hat->describe()},
                  {"sampler_hash", hex64(batch.config_hash)}}},
                {"grid", grid.to_json()},
                {"output", {{"csv", "samples.csv"}, {"binary", "samples.bin"}, {"at_time", batch.at_time}}}};
    json diag = json::object();
    try {
        const GaussianLaw fit = empirical_gaussian_fit(batch.points, cfg.workers);
        record["fit"] = law_json(fit);
        if (const auto g = as_single_gaussian(law)) {
            const GaussianLaw target = g->forward_marginal(grid.t(1));
            diag["kl_fit_vs_exact_marginal"] = kl_gaussian(fit, target);
            if (s_hat->at(grid.t(1))->affine()) {
                const GaussianLaw prop = propagate_gaussian(variant, grid, *s_hat);
                diag["propagated_law"] = law_json(prop);
                diag["kl_exact_marginal_vs_propagated"] = kl_gaussian(target, prop);
                diag["kl_fit_vs_propagated"] = kl_gaussian(fit, prop);
            }
        }
    } catch (const InvalidArgument& e) {
        record["fit"] = nullptr;
        diag["fit_error"] = e.what();
    }
    record["diagnostics"] = diag;
    write_json(cfg.output_dir / "run_record.json", record);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.output_dir / "run_metadata.json", {{"started_at", started},
                                                      {"finished_at", utc_now()},
                                                      {"sampling_time_s", sample_time},
                                                      {"wall_time_s", wall},
                                                      {"workers", cfg.workers}});
    log << "sampled " << cfg.n_samples << " points with " << to_string(variant) << " (K=" << grid.K()
        << ", c=" << grid.c() << ") -> " << (cfg.output_dir / "samples.csv").string() << '\n';
    if (diag.contains("kl_fit_vs_exact_marginal"))
        log << "KL(fitted Gaussian || exact p_t1) = " << diag["kl_fit_vs_exact_marginal"].get<double>() << '\n';
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    const SweepReport rep = run_sweep(cfg);
    for (const auto& w : rep.warnings) log << "warning: " << w << '\n';
    for (const auto& p : rep.points) {
        json rec = point_json(p);
        rec["schema"] = "onsl.sweep_point/1";
        rec["config_hash"] = hex64(rep.config_hash);
        rec["grid"] = grid_from_iterations(cfg.grid.delta, cfg.grid.T, p.K).grid.to_json();
        write_json(cfg.output_dir / "runs" / record_name(p), rec);
    }
    write_sweep_csv(cfg.output_dir / "sweep.csv", rep);
    json full = rep.to_json();
    full["config"] = cfg.canonical_json();
    write_json(cfg.output_dir / "sweep_report.json", full);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(cfg.output_dir / "sweep_metadata.json",
               {{"started_at", started}, {"finished_at", utc_now()}, {"wall_time_s", wall}, {"workers", cfg.workers}});
    for (const auto& f : rep.fits) {
        log << to_string(f.variant) << ": ";
        if (f.fit)
            log << (rep.eps_mode ? "slope vs eps^2 " : "log-log slope ") << f.fit->slope << ", R^2 " << f.fit->r_squared
                << '\n';
        else
            log << "no fit (" << f.error << ")\n";
    }
    return 0;
}

int cmd_rate_fit(const RateFitInput& input, const fs::path& out_dir, std::ostream& log) {
    const RateFitResult res = refit_sweep_csv(input);
    json fits = json::array();
    for (const auto& f : res.fits) {
        std::ostringstream os;
        os << "# config_hash=" << hex64(res.config_hash) << "\nK,value,floor,corrected,ln_K,ln_corrected\n";
        for (const auto& p : res.points) {
            if (p.variant != f.variant) continue;
            os << p.K << ',' << fmt17(p.kl) << ',' << fmt17(p.floor) << ',' << fmt17(p.corrected) << ','
               << fmt17(std::log(static_cast<double>(p.K))) << ','
               << (p.corrected > 0.0 ? fmt17(std::log(p.corrected)) : std::string("nan")) << '\n';
        }
        write_atomic(out_dir / ("rate_fit_" + to_string(f.variant) + ".csv"), os.str());
        fits.push_back(fit_json(f));
        log << to_string(f.variant) << ": ";
        if (f.fit)
            log << "slope " << fmt17(f.fit->slope) << ", intercept " << fmt17(f.fit->intercept) << ", R^2 "
                << fmt17(f.fit->r_squared) << '\n';
        else
            log << "no fit (" << f.error << ")\n";
    }
    write_json(out_dir / "rate_fit.json", {{"schema", "onsl.rate_fit/1"},
                                           {"tool_version", kToolVersion},
                                           {"config_hash", hex64(res.config_hash)},
                                           {"mode", res.eps_mode ? "eps" : "K"},
                                           {"fits", fits}});
    bool ok = true;
    for (const auto& f : res.fits) ok = ok && f.fit.has_value();
    return ok ? 0 : 1;
}

}  // namespace onsl
