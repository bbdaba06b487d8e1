#pragma once

// Evaluation engine for the log-density of a finite Gaussian mixture and its
// first three spatial derivatives of the log (score, score Jacobian, score
// Laplacian). Responsibilities use max-shifted log-sum-exp.

#include "onsl/distributions.hpp"
#include "onsl/types.hpp"

#include <vector>

namespace onsl {

enum class DerivLevel { score, jacobian, laplacian };

// Output and scratch buffers for one evaluation. Reuse across calls on the
// same thread to avoid reallocations.
struct ScoreEval {
    double log_density = 0.0;
    Vector score;
    Matrix jacobian;
    Vector laplacian;

    // scratch
    Vector logits;
    Vector resp;
    Matrix residual;  // column i: g_i = -P_i (x - m_i)
    Vector tmp;
};

/// Mixture sum_i w_i N(m_i, C_i) with precomputed precisions P_i = C_i^{-1}.
class ComponentSet {
public:
    ComponentSet() = default;

    // General components; covariances must be SPD.
    static ComponentSet from_covariances(const std::vector<double>& weights, const std::vector<Vector>& means,
                                         const std::vector<Matrix>& covs);
    // Isotropic components C_i = var * I (var > 0), built without inversion.
    static ComponentSet isotropic(const std::vector<double>& weights, const std::vector<Vector>& means, double var);

    int dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return means_.size(); }
    const std::vector<Vector>& means() const noexcept { return means_; }
    const std::vector<Matrix>& precisions() const noexcept { return precisions_; }

    void evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const;

    double log_density(const Vector& x) const;

private:
    int dim_ = 0;
    std::vector<double> log_norm_;  // log w_i - 0.5 log det(2 pi C_i)
    std::vector<Vector> means_;
    std::vector<Matrix> precisions_;
    std::vector<double> precision_trace_;
};

// Marginal law of x(t) under the forward process as a component set.
ComponentSet x_marginal_components(const DataLaw& law, double t);
// Marginal law of the rescaled process z(t) = y + sqrt(e^{2t} - 1) eta.
ComponentSet z_marginal_components(const DataLaw& law, double t);

}  // namespace onsl
