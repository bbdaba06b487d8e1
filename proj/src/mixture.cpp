#include "onsl/mixture.hpp"

#include <cmath>
#include <numbers>

namespace onsl {

ComponentSet ComponentSet::from_covariances(const std::vector<double>& weights, const std::vector<Vector>& means,
                                            const std::vector<Matrix>& covs) {
    ComponentSet cs;
    cs.dim_ = static_cast<int>(means.front().size());
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < means.size(); ++i) {
        Eigen::LLT<Matrix> llt(covs[i]);
        if (llt.info() != Eigen::Success) throw SingularScoreError("component covariance is not positive definite");
        const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        Matrix prec = llt.solve(Matrix::Identity(cs.dim_, cs.dim_));
        prec = 0.5 * (prec + prec.transpose());
        cs.log_norm_.push_back(std::log(weights[i]) - 0.5 * (logdet + cs.dim_ * log2pi));
        cs.means_.push_back(means[i]);
        cs.precision_trace_.push_back(prec.trace());
        cs.precisions_.push_back(std::move(prec));
    }
    return cs;
}

ComponentSet ComponentSet::isotropic(const std::vector<double>& weights, const std::vector<Vector>& means, double var) {
    if (!(var > 0.0)) throw SingularScoreError("isotropic component variance must be positive");
    ComponentSet cs;
    cs.dim_ = static_cast<int>(means.front().size());
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const Matrix prec = Matrix::Identity(cs.dim_, cs.dim_) / var;
    for (std::size_t i = 0; i < means.size(); ++i) {
        cs.log_norm_.push_back(std::log(weights[i]) - 0.5 * cs.dim_ * (std::log(var) + log2pi));
        cs.means_.push_back(means[i]);
        cs.precisions_.push_back(prec);
        cs.precision_trace_.push_back(cs.dim_ / var);
    }
    return cs;
}

void ComponentSet::evaluate(const Vector& x, DerivLevel level, ScoreEval& out) const {
    const auto n = static_cast<Eigen::Index>(means_.size());
    if (x.size() != dim_) throw InvalidArgument("score evaluation: dimension mismatch");
    out.logits.resize(n);
    out.resp.resize(n);
    out.residual.resize(dim_, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.tmp = x - means_[i];
        out.residual.col(i).noalias() = -precisions_[i] * out.tmp;
        out.logits(i) = log_norm_[i] + 0.5 * out.tmp.dot(out.residual.col(i));
    }
    const double mx = out.logits.maxCoeff();
    out.resp = (out.logits.array() - mx).exp();
    const double z = out.resp.sum();
    out.resp /= z;
    out.log_density = mx + std::log(z);

    out.score.noalias() = out.residual * out.resp;
    if (level == DerivLevel::score) return;

    // J = sum_i r_i (g_i g_i^T - P_i) - s s^T
    out.jacobian.setZero(dim_, dim_);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = out.resp(i);
        if (r == 0.0) continue;
        out.jacobian.noalias() += r * (out.residual.col(i) * out.residual.col(i).transpose());
        out.jacobian -= r * precisions_[i];
    }
    out.jacobian.noalias() -= out.score * out.score.transpose();
    if (level == DerivLevel::jacobian) return;

    // Laplacian of each score coordinate:
    // sum_i r_i [g_i |g_i|^2 - g_i (g_i.s) - 2 P_i g_i - g_i tr P_i + P_i s] - J s - s tr J
    out.laplacian.setZero(dim_);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = out.resp(i);
        if (r == 0.0) continue;
        const auto g = out.residual.col(i);
        const double coeff = g.squaredNorm() - g.dot(out.score) - precision_trace_[i];
        out.laplacian.noalias() += r * coeff * g;
        out.tmp.noalias() = precisions_[i] * (out.score - 2.0 * g);
        out.laplacian.noalias() += r * out.tmp;
    }
    out.laplacian.noalias() -= out.jacobian * out.score;
    out.laplacian -= out.jacobian.trace() * out.score;
}

double ComponentSet::log_density(const Vector& x) const {
    ScoreEval ev;
    evaluate(x, DerivLevel::score, ev);
    return ev.log_density;
}

ComponentSet x_marginal_components(const DataLaw& law, double t) {
    if (t < 0.0) throw InvalidArgument("marginal time must be >= 0");
    const double a = std::exp(-t);
    const double v = -std::expm1(-2.0 * t);
    if (const auto* gm = std::get_if<GaussianMixture>(&law)) {
        const GaussianMixture m = gm->marginal(t);
        return ComponentSet::from_covariances(m.weights(), m.means(), m.covs());
    }
    const auto& ds = std::get<DiscreteSupport>(law);
    if (!(v > 0.0)) throw SingularScoreError("score of a point mass is undefined at t = 0");
    std::vector<Vector> means;
    for (const auto& y : ds.atoms()) means.push_back(a * y);
    return ComponentSet::isotropic(ds.weights(), means, v);
}

ComponentSet z_marginal_components(const DataLaw& law, double t) {
    if (t < 0.0) throw InvalidArgument("marginal time must be >= 0");
    const double var = std::expm1(2.0 * t);
    if (const auto* gm = std::get_if<GaussianMixture>(&law)) {
        std::vector<Matrix> covs;
        for (const auto& c : gm->covs()) {
            Matrix cz = c;
            cz.diagonal().array() += var;
            covs.push_back(std::move(cz));
        }
        return ComponentSet::from_covariances(gm->weights(), gm->means(), covs);
    }
    const auto& ds = std::get<DiscreteSupport>(law);
    if (!(var > 0.0)) throw SingularScoreError("score of a point mass is undefined at t = 0");
    return ComponentSet::isotropic(ds.weights(), ds.atoms(), var);
}

}  // namespace onsl
