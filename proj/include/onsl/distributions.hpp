#pragma once

// Analytic data laws: finite Gaussian mixtures, finite supports (point
// masses) and single Gaussians used by the exact-law oracle.

#include "onsl/rng.hpp"
#include "onsl/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <variant>
#include <vector>

namespace onsl {

class GaussianLaw {
public:
    GaussianLaw(Vector mean, Matrix cov);

    static GaussianLaw standard(int d);

    int dim() const noexcept { return static_cast<int>(mean_.size()); }
    const Vector& mean() const noexcept { return mean_; }
    const Matrix& cov() const noexcept { return cov_; }

    // Law of e^{-t} Y + sqrt(1 - e^{-2t}) N(0, I) for Y ~ this.
    GaussianLaw forward_marginal(double t) const;

private:
    Vector mean_;
    Matrix cov_;
};

class GaussianMixture {
public:
    GaussianMixture(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covs);

    static GaussianMixture from_law(const GaussianLaw& law);

    int dim() const noexcept { return static_cast<int>(means_.front().size()); }
    std::size_t size() const noexcept { return weights_.size(); }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const std::vector<Vector>& means() const noexcept { return means_; }
    const std::vector<Matrix>& covs() const noexcept { return covs_; }

    // sum_i w_i (|mu_i|^2 + tr Sigma_i)
    double second_moment() const;

    // p_t: components N(e^{-t} mu_i, e^{-2t} Sigma_i + (1 - e^{-2t}) I).
    GaussianMixture marginal(double t) const;

private:
    std::vector<double> weights_;
    std::vector<Vector> means_;
    std::vector<Matrix> covs_;
};

class DiscreteSupport {
public:
    DiscreteSupport(std::vector<Vector> atoms, std::vector<double> weights);

    static DiscreteSupport point_mass(const Vector& y);

    int dim() const noexcept { return static_cast<int>(atoms_.front().size()); }
    std::size_t size() const noexcept { return atoms_.size(); }
    const std::vector<Vector>& atoms() const noexcept { return atoms_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

    double second_moment() const;

private:
    std::vector<Vector> atoms_;
    std::vector<double> weights_;
};

using DataLaw = std::variant<GaussianMixture, DiscreteSupport>;

int dim(const DataLaw& law);
double second_moment(const DataLaw& law);
std::size_t num_components(const DataLaw& law);

// Draws y ~ p_data; Cholesky factors are computed once at construction.
class DataSampler {
public:
    explicit DataSampler(DataLaw law);

    int dim() const noexcept { return onsl::dim(law_); }
    const DataLaw& law() const noexcept { return law_; }
    void draw(CounterRng& rng, Vector& out) const;

private:
    DataLaw law_;
    std::vector<Matrix> chol_;
    std::vector<double> weights_;
};

// Single-component Gaussian view of the law (a point mass has zero covariance),
// used by the closed-form checks. Throws ContractError for multi-component laws.
struct SingleGaussianView {
    Vector mean;
    Matrix cov;  // may be singular (point mass)
};
SingleGaussianView single_gaussian_view(const DataLaw& law);

// JSON description: {"type": "mixture", "weights", "means", "covs"} or
// {"type": "discrete", "weights", "atoms"}.
DataLaw data_law_from_json(const nlohmann::json& j);
nlohmann::json data_law_to_json(const DataLaw& law);
DataLaw load_data_law(const std::filesystem::path& path);

bool is_spd(const Matrix& m);

}  // namespace onsl
