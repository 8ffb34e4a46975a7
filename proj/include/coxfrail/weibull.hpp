#pragma once

// Parametric comparator: full-likelihood SAEM for the Gaussian frailty
// model with Weibull baseline hazard h0(t) = lambda rho t^(rho - 1).
// Given the frailties the likelihood factorises over clusters, and the
// stochastic approximation of the complete log likelihood only needs,
// per individual, the averaged relative risk exp(W b) and, overall, the
// averaged sum of W b over events and the frailty second moment.

#include "coxfrail/data_model.hpp"
#include "coxfrail/fit_result.hpp"
#include "coxfrail/rng.hpp"
#include "coxfrail/saem.hpp"

namespace coxfrail {

struct WeibullParams {
  double lambda = 1.0;
  double rho = 1.0;
  Vector beta;
  FrailtyParam gamma = FrailtyParam::scalar(1.0);

  // (lambda, rho, beta, gamma vector)
  Vector to_vector() const;
  std::vector<std::string> names() const;
};

double log_complete_weibull(const WeibullParams& p, const SurvivalDataset& data, const FrailtyState& frailty);

// Gradient in (lambda, rho, beta) on the natural scale.
Vector weibull_gradient(const WeibullParams& p, const SurvivalDataset& data, const FrailtyState& frailty);

// Censored Weibull MLE of (lambda, rho, beta) with the frailties fixed at
// zero; used as the starting point.
WeibullParams weibull_init(const SurvivalDataset& data, FrailtyParam::Kind kind);

// Runs cfg.n_inner cluster-at-a-time MH sweeps targeting the frailty
// posterior under the Weibull likelihood.
McmcDiagnostics weibull_sweep(FrailtyState& state, const WeibullParams& p, const SurvivalDataset& data,
                              const McmcConfig& cfg, Rng& rng);

FitResult weibull_saem_fit(const SurvivalDataset& data, const WeibullParams& init, const SaemConfig& config,
                           Rng& rng);

}  // namespace coxfrail
