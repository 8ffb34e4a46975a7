#pragma once

// Conditional and complete log partial likelihood of the Gaussian frailty
// Cox model, its derivatives in theta = (beta, gamma), and a quadrature
// evaluation of the integrated (marginal) partial likelihood.
//
// Tied event times share one risk set evaluated at the common time
// (Breslow). Risk-set sums are accumulated with a running maximum so that
// exp() never overflows.

#include "coxfrail/data_model.hpp"

namespace coxfrail {

struct LogLikParts {
  double partial_term = 0.0;  // sum of event terms
  double prior_term = 0.0;    // sum_i log g_gamma(b_i)
  double total = 0.0;
};

// log g_gamma(b) for the centred Gaussian frailty density.
double log_frailty_density(const FrailtyParam& gamma, const Eigen::Ref<const Vector>& b);
double log_frailty_prior(const FrailtyParam& gamma, const FrailtyState& frailty);

// sum_i b_i b_i^T, the Gaussian sufficient statistic of the frailties.
Matrix frailty_moment(const FrailtyState& frailty);

// omega_j = W_j . b_{cluster(j)} for every individual.
Vector frailty_offsets(const SurvivalDataset& data, const FrailtyState& frailty);

struct CoxDerivatives {
  double value = 0.0;
  Vector grad;  // filled when order >= 1
  Matrix hess;  // filled when order >= 2
};

// Event part of the log partial likelihood with linear predictor
// Z beta + offset, and (optionally) its beta gradient and Hessian.
CoxDerivatives cox_partial(const SurvivalDataset& data, const RiskSetIndex& index,
                           const Vector& beta, const Vector& offset, int order);

LogLikParts log_complete_partial(const ModelParams& params, const SurvivalDataset& data,
                                 const RiskSetIndex& index, const FrailtyState& frailty);

Vector grad_beta(const ModelParams& params, const SurvivalDataset& data,
                 const RiskSetIndex& index, const FrailtyState& frailty);

// Gradient / Hessian of sum_i log g_gamma(b_i) in the frailty parameter
// vector (natural variance scale). Throws when gamma is at the boundary.
Vector grad_gamma(const ModelParams& params, const FrailtyState& frailty);
Matrix hessian_gamma(const ModelParams& params, const FrailtyState& frailty);

// Same quantities from the sufficient statistic sum_i b_i b_i^T.
Vector grad_gamma_from_moment(const FrailtyParam& gamma, const Matrix& moment, double n_clusters);
Matrix hessian_gamma_from_moment(const FrailtyParam& gamma, const Matrix& moment, double n_clusters);

// Full score and Hessian of the complete log partial likelihood in theta.
// The beta/gamma cross block is identically zero.
Vector score_theta(const ModelParams& params, const SurvivalDataset& data,
                   const RiskSetIndex& index, const FrailtyState& frailty);
Matrix hessian_theta(const ModelParams& params, const SurvivalDataset& data,
                     const RiskSetIndex& index, const FrailtyState& frailty);

// log of the complete partial likelihood integrated over all frailties by
// tensor Gauss-Hermite quadrature. The integrand couples clusters through
// the risk sets, so the rule has quad_order^(N f) nodes; refuses N f > 6.
double log_marginal_partial_oracle(const ModelParams& params, const SurvivalDataset& data,
                                   const RiskSetIndex& index, int quad_order);

}  // namespace coxfrail
