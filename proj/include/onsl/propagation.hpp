#pragma once

// Exact law propagation of the samplers for affine score estimates: every
// update is affine plus independent Gaussian noise, so a Gaussian initial law
// stays Gaussian and its mean / covariance follow closed recursions.

#include "onsl/distributions.hpp"
#include "onsl/process.hpp"
#include "onsl/sampler.hpp"
#include "onsl/score_field.hpp"

#include <vector>

namespace onsl {

/// Law at t_1 of the two-phase sampler started from `init` (default N(0, I))
/// at t_{K+1}. Throws ContractError if any score slice is not affine.
GaussianLaw propagate_algorithm1_gaussian(const TimeGrid& grid, const ScoreField& s_hat,
                                          const GaussianLaw* init = nullptr);
GaussianLaw propagate_ei_sde_gaussian(const TimeGrid& grid, const ScoreField& s_hat,
                                      const GaussianLaw* init = nullptr);
GaussianLaw propagate_pf_ode_gaussian(const TimeGrid& grid, const ScoreField& s_hat,
                                      const GaussianLaw* init = nullptr);
GaussianLaw propagate_gaussian(Variant variant, const TimeGrid& grid, const ScoreField& s_hat,
                               const GaussianLaw* init = nullptr);

/// Terms of the KL chain rule along the grid for Gaussian data:
/// KL(p_T || N(0, I)) + sum_{k=2}^{K+1} E_{x ~ p_{t_k}} KL(true kernel || sampler kernel).
/// This upper-bounds KL(p_{t_1} || sampler law at t_1).
struct ChainRuleKl {
    double init = 0.0;
    std::vector<double> steps;  // index j corresponds to k = K+1-j
    double total = 0.0;
};

/// Two-phase sampler: the true kernel follows the exact probability-flow map
/// from t_k to t_{k-2} and then noises to t_{k-1}.
ChainRuleKl chain_rule_kl_algorithm1(const GaussianLaw& p_data, const TimeGrid& grid, const ScoreField& s_hat);
/// EI-SDE baseline: the true kernel is the reverse transition p(x_{k-1} | x_k).
ChainRuleKl chain_rule_kl_ei_sde(const GaussianLaw& p_data, const TimeGrid& grid, const ScoreField& s_hat);

/// Exact probability-flow map for Gaussian data between times t and t_to:
/// x(t_to) = F x(t) + f.
AffineMap gaussian_flow_map(const GaussianLaw& p_data, double t, double t_to);

}  // namespace onsl
