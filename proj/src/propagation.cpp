#include "onsl/propagation.hpp"

#include "onsl/metrics.hpp"

#include <cmath>

namespace onsl {
namespace {

AffineMap affine_slice(const ScoreField& s_hat, double t) {
    auto map = s_hat.at(t)->affine();
    if (!map) throw ContractError("exact law propagation needs an affine score estimate");
    return *map;
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

struct Moments {
    Vector mean;
    Matrix cov;
};

Moments initial_moments(const ScoreField& s_hat, const GaussianLaw* init) {
    if (init) {
        if (init->dim() != s_hat.dim()) throw InvalidArgument("initial law dimension mismatch");
        return {init->mean(), init->cov()};
    }
    const int d = s_hat.dim();
    return {Vector::Zero(d), Matrix::Identity(d, d)};
}

void require_x_space(const ScoreField& s_hat, const TimeGrid& grid) {
    if (s_hat.space() != Space::x) throw InvalidArgument("propagation needs an x-space score field");
    if (grid.K() < 2) throw InvalidArgument("propagation needs K >= 2");
}

// Expected KL between kernels N(L x + l, S1) and N(M x + m, S2) over x ~ N(mu, C).
double expected_kernel_kl(const Matrix& L, const Vector& l, const Matrix& S1, const Matrix& M, const Vector& m,
                          const Matrix& S2, const Vector& mu, const Matrix& C) {
    const Eigen::LLT<Matrix> l2(S2);
    const Eigen::LLT<Matrix> l1(S1);
    if (l1.info() != Eigen::Success || l2.info() != Eigen::Success) throw Error("kernel covariance is not SPD");
    const Matrix D = L - M;
    const Vector e = D * mu + (l - m);
    const double d = static_cast<double>(mu.size());
    const double tr_ratio = l2.solve(S1).trace();
    const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
    const double logdet1 = 2.0 * l1.matrixLLT().diagonal().array().log().sum();
    const double quad = e.dot(l2.solve(e)) + (l2.solve(D * C * D.transpose())).trace();
    return 0.5 * (tr_ratio - d + logdet2 - logdet1 + quad);
}

}  // namespace

GaussianLaw propagate_algorithm1_gaussian(const TimeGrid& grid, const ScoreField& s_hat, const GaussianLaw* init) {
    require_x_space(s_hat, grid);
    auto [mean, cov] = initial_moments(s_hat, init);
    const int d = s_hat.dim();
    const Matrix I = Matrix::Identity(d, d);
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        const AffineMap a = affine_slice(s_hat, grid.t(k));
        const double em1 = std::expm1(grid.h(k) + grid.h(k - 1));
        const Matrix G = (1.0 + em1) * I + em1 * a.A;
        mean = G * mean + em1 * a.b;
        cov = symmetrized(G * cov * G.transpose());
        const double h = grid.h(k - 1);
        mean *= std::exp(-h);
        cov = symmetrized(std::exp(-2.0 * h) * cov - std::expm1(-2.0 * h) * I);
    }
    return GaussianLaw(mean, cov);
}

GaussianLaw propagate_ei_sde_gaussian(const TimeGrid& grid, const ScoreField& s_hat, const GaussianLaw* init) {
    require_x_space(s_hat, grid);
    auto [mean, cov] = initial_moments(s_hat, init);
    const int d = s_hat.dim();
    const Matrix I = Matrix::Identity(d, d);
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        const AffineMap a = affine_slice(s_hat, grid.t(k));
        const double h = grid.h(k);
        const double em1 = std::expm1(h);
        const Matrix G = (1.0 + em1) * I + 2.0 * em1 * a.A;
        mean = G * mean + 2.0 * em1 * a.b;
        cov = symmetrized(G * cov * G.transpose() + std::expm1(2.0 * h) * I);
    }
    return GaussianLaw(mean, cov);
}

GaussianLaw propagate_pf_ode_gaussian(const TimeGrid& grid, const ScoreField& s_hat, const GaussianLaw* init) {
    require_x_space(s_hat, grid);
    auto [mean, cov] = initial_moments(s_hat, init);
    const int d = s_hat.dim();
    const Matrix I = Matrix::Identity(d, d);
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        const AffineMap a = affine_slice(s_hat, grid.t(k));
        const double em1 = std::expm1(grid.h(k));
        const Matrix G = (1.0 + em1) * I + em1 * a.A;
        mean = G * mean + em1 * a.b;
        cov = symmetrized(G * cov * G.transpose());
    }
    return GaussianLaw(mean, cov);
}

GaussianLaw propagate_gaussian(Variant variant, const TimeGrid& grid, const ScoreField& s_hat,
                               const GaussianLaw* init) {
    switch (variant) {
        case Variant::ode_noise: return propagate_algorithm1_gaussian(grid, s_hat, init);
        case Variant::ei_sde: return propagate_ei_sde_gaussian(grid, s_hat, init);
        case Variant::pf_ode: return propagate_pf_ode_gaussian(grid, s_hat, init);
    }
    throw InvalidArgument("unknown variant");
}

AffineMap gaussian_flow_map(const GaussianLaw& p_data, double t, double t_to) {
    // In z = e^t x the flow is z(t_to) - mu = C_{t_to}^{1/2} C_t^{-1/2} (z(t) - mu)
    // with C_t = Sigma + (e^{2t} - 1) I; all C_t share Sigma's eigenvectors.
    Eigen::SelfAdjointEigenSolver<Matrix> es(p_data.cov());
    const Vector lam = es.eigenvalues();
    const double v_from = std::expm1(2.0 * t);
    const double v_to = std::expm1(2.0 * t_to);
    Vector ratio(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) ratio(i) = std::sqrt((lam(i) + v_to) / (lam(i) + v_from));
    const Matrix R = es.eigenvectors() * ratio.asDiagonal() * es.eigenvectors().transpose();
    const int d = p_data.dim();
    AffineMap out;
    out.A = std::exp(t - t_to) * R;
    out.b = std::exp(-t_to) * (Matrix::Identity(d, d) - R) * p_data.mean();
    return out;
}

ChainRuleKl chain_rule_kl_algorithm1(const GaussianLaw& p_data, const TimeGrid& grid, const ScoreField& s_hat) {
    require_x_space(s_hat, grid);
    const int d = s_hat.dim();
    const Matrix I = Matrix::Identity(d, d);
    ChainRuleKl out;
    out.init = kl_gaussian(p_data.forward_marginal(grid.horizon()), GaussianLaw::standard(d));
    out.total = out.init;
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        const GaussianLaw pk = p_data.forward_marginal(grid.t(k));
        const AffineMap flow = gaussian_flow_map(p_data, grid.t(k), grid.t(k - 2));
        const AffineMap a = affine_slice(s_hat, grid.t(k));
        const double em1 = std::expm1(grid.h(k) + grid.h(k - 1));
        const Matrix D = flow.A - ((1.0 + em1) * I + em1 * a.A);
        const Vector e = D * pk.mean() + flow.b - em1 * a.b;
        // E ||x_{k-0.5} - x_hat_{k-0.5}||^2, then the same-covariance conditional KL.
        const double msq = e.squaredNorm() + (D * pk.cov() * D.transpose()).trace();
        const double h = grid.h(k - 1);
        const double term = std::exp(-2.0 * h) * msq / (-2.0 * std::expm1(-2.0 * h));
        out.steps.push_back(term);
        out.total += term;
    }
    return out;
}

ChainRuleKl chain_rule_kl_ei_sde(const GaussianLaw& p_data, const TimeGrid& grid, const ScoreField& s_hat) {
    require_x_space(s_hat, grid);
    const int d = s_hat.dim();
    const Matrix I = Matrix::Identity(d, d);
    ChainRuleKl out;
    out.init = kl_gaussian(p_data.forward_marginal(grid.horizon()), GaussianLaw::standard(d));
    out.total = out.init;
    for (std::size_t k = grid.K() + 1; k >= 2; --k) {
        const double h = grid.h(k);
        const GaussianLaw prev = p_data.forward_marginal(grid.t(k - 1));
        const GaussianLaw cur = p_data.forward_marginal(grid.t(k));
        // x_k = a x_{k-1} + sigma xi; posterior of x_{k-1} given x_k.
        const double a = std::exp(-h);
        const double s2 = -std::expm1(-2.0 * h);
        const Matrix prec_prev = prev.cov().llt().solve(I);
        const Matrix post_cov = symmetrized((prec_prev + (a * a / s2) * I).llt().solve(I));
        const Matrix L = post_cov * (a / s2);
        const Vector l = post_cov * prec_prev * prev.mean();
        const AffineMap sc = affine_slice(s_hat, grid.t(k));
        const double em1 = std::expm1(h);
        const Matrix M = (1.0 + em1) * I + 2.0 * em1 * sc.A;
        const Vector m = 2.0 * em1 * sc.b;
        const Matrix S2 = std::expm1(2.0 * h) * I;
        const double term = expected_kernel_kl(L, l, post_cov, M, m, S2, cur.mean(), cur.cov());
        out.steps.push_back(term);
        out.total += term;
    }
    return out;
}

}  // namespace onsl
