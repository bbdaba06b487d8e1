#include "onsl/distributions.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace onsl {
namespace {

void check_weights(const std::vector<double>& w) {
    if (w.empty()) throw InvalidArgument("distribution needs at least one component");
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidArgument("weights must be nonnegative and finite");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("weights must sum to 1");
}

Vector vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != n) throw ConfigError("covariance must be a square matrix");
        for (Eigen::Index c = 0; c < n; ++c) m(r, c) = rows[r][c];
    }
    return m;
}

nlohmann::json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

std::size_t pick_component(const std::vector<double>& weights, double u) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    return weights.size() - 1;
}

}  // namespace

bool is_spd(const Matrix& m) {
    if (m.rows() != m.cols() || m.rows() == 0) return false;
    if (!m.allFinite()) return false;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    return eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() > 0.0;
}

GaussianLaw::GaussianLaw(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() == 0) throw InvalidArgument("GaussianLaw: empty mean");
    if (cov_.rows() != mean_.size()) throw InvalidArgument("GaussianLaw: covariance dimension mismatch");
    if (!is_spd(cov_)) throw InvalidArgument("GaussianLaw: covariance must be symmetric positive definite");
}

GaussianLaw GaussianLaw::standard(int d) { return GaussianLaw(Vector::Zero(d), Matrix::Identity(d, d)); }

GaussianLaw GaussianLaw::forward_marginal(double t) const {
    const double a = std::exp(-t);
    const double v = -std::expm1(-2.0 * t);
    Matrix cov = a * a * cov_;
    cov.diagonal().array() += v;
    return GaussianLaw(a * mean_, cov);
}

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covs)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
    check_weights(weights_);
    if (means_.size() != weights_.size() || covs_.size() != weights_.size())
        throw InvalidArgument("GaussianMixture: weights, means and covs must have equal length");
    const auto d = means_.front().size();
    if (d == 0) throw InvalidArgument("GaussianMixture: zero dimension");
    for (std::size_t i = 0; i < means_.size(); ++i) {
        if (means_[i].size() != d || covs_[i].rows() != d)
            throw InvalidArgument("GaussianMixture: inconsistent component dimensions");
        if (!is_spd(covs_[i]))
            throw InvalidArgument("GaussianMixture: component " + std::to_string(i) + " covariance is not SPD");
    }
}

GaussianMixture GaussianMixture::from_law(const GaussianLaw& law) {
    return GaussianMixture({1.0}, {law.mean()}, {law.cov()});
}

double GaussianMixture::second_moment() const {
    double m2 = 0.0;
    for (std::size_t i = 0; i < size(); ++i) m2 += weights_[i] * (means_[i].squaredNorm() + covs_[i].trace());
    return m2;
}

GaussianMixture GaussianMixture::marginal(double t) const {
    if (t < 0.0) throw InvalidArgument("marginal: t must be >= 0");
    const double a = std::exp(-t);
    const double v = -std::expm1(-2.0 * t);
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    for (std::size_t i = 0; i < size(); ++i) {
        means.push_back(a * means_[i]);
        Matrix c = a * a * covs_[i];
        c.diagonal().array() += v;
        covs.push_back(std::move(c));
    }
    return GaussianMixture(weights_, std::move(means), std::move(covs));
}

DiscreteSupport::DiscreteSupport(std::vector<Vector> atoms, std::vector<double> weights)
    : atoms_(std::move(atoms)), weights_(std::move(weights)) {
    check_weights(weights_);
    if (atoms_.size() != weights_.size()) throw InvalidArgument("DiscreteSupport: atoms and weights differ in length");
    const auto d = atoms_.front().size();
    if (d == 0) throw InvalidArgument("DiscreteSupport: zero dimension");
    for (const auto& a : atoms_) {
        if (a.size() != d) throw InvalidArgument("DiscreteSupport: inconsistent atom dimensions");
    }
}

DiscreteSupport DiscreteSupport::point_mass(const Vector& y) { return DiscreteSupport({y}, {1.0}); }

double DiscreteSupport::second_moment() const {
    double m2 = 0.0;
    for (std::size_t i = 0; i < size(); ++i) m2 += weights_[i] * atoms_[i].squaredNorm();
    return m2;
}

int dim(const DataLaw& law) {
    return std::visit([](const auto& l) { return l.dim(); }, law);
}

double second_moment(const DataLaw& law) {
    return std::visit([](const auto& l) { return l.second_moment(); }, law);
}

std::size_t num_components(const DataLaw& law) {
    return std::visit([](const auto& l) { return l.size(); }, law);
}

DataSampler::DataSampler(DataLaw law) : law_(std::move(law)) {
    if (const auto* gm = std::get_if<GaussianMixture>(&law_)) {
        for (const auto& c : gm->covs()) chol_.push_back(Eigen::LLT<Matrix>(c).matrixL());
        weights_ = gm->weights();
    } else {
        weights_ = std::get<DiscreteSupport>(law_).weights();
    }
}

void DataSampler::draw(CounterRng& rng, Vector& out) const {
    const std::size_t i = weights_.size() == 1 ? 0 : pick_component(weights_, rng.uniform());
    if (const auto* gm = std::get_if<GaussianMixture>(&law_)) {
        const int d = gm->dim();
        Vector eta(d);
        rng.fill_normal({eta.data(), static_cast<std::size_t>(d)});
        out = gm->means()[i] + chol_[i].triangularView<Eigen::Lower>() * eta;
        return;
    }
    out = std::get<DiscreteSupport>(law_).atoms()[i];
}

SingleGaussianView single_gaussian_view(const DataLaw& law) {
    if (num_components(law) != 1) throw ContractError("closed form needs a single-component law");
    if (const auto* gm = std::get_if<GaussianMixture>(&law)) return {gm->means()[0], gm->covs()[0]};
    const auto& ds = std::get<DiscreteSupport>(law);
    return {ds.atoms()[0], Matrix::Zero(ds.dim(), ds.dim())};
}

DataLaw data_law_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("distribution must be a JSON object");
    const auto type = j.at("type").get<std::string>();
    auto reject_unknown = [&](std::initializer_list<const char*> allowed) {
        for (const auto& [key, _] : j.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) throw ConfigError("unknown key in distribution: " + key);
        }
    };
    try {
        if (type == "mixture") {
            reject_unknown({"type", "weights", "means", "covs"});
            std::vector<Vector> means;
            std::vector<Matrix> covs;
            for (const auto& m : j.at("means")) means.push_back(vector_from_json(m));
            for (const auto& c : j.at("covs")) covs.push_back(matrix_from_json(c));
            return GaussianMixture(j.at("weights").get<std::vector<double>>(), std::move(means), std::move(covs));
        }
        if (type == "discrete") {
            reject_unknown({"type", "weights", "atoms"});
            std::vector<Vector> atoms;
            for (const auto& a : j.at("atoms")) atoms.push_back(vector_from_json(a));
            return DiscreteSupport(std::move(atoms), j.at("weights").get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed distribution: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    throw ConfigError("distribution type must be \"mixture\" or \"discrete\"");
}

nlohmann::json data_law_to_json(const DataLaw& law) {
    if (const auto* gm = std::get_if<GaussianMixture>(&law)) {
        nlohmann::json means = nlohmann::json::array(), covs = nlohmann::json::array();
        for (const auto& m : gm->means()) means.push_back(to_json(m));
        for (const auto& c : gm->covs()) covs.push_back(to_json(c));
        return {{"type", "mixture"}, {"weights", gm->weights()}, {"means", means}, {"covs", covs}};
    }
    const auto& ds = std::get<DiscreteSupport>(law);
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& a : ds.atoms()) atoms.push_back(to_json(a));
    return {{"type", "discrete"}, {"weights", ds.weights()}, {"atoms", atoms}};
}

DataLaw load_data_law(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open distribution file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return data_law_from_json(j);
}

}  // namespace onsl
