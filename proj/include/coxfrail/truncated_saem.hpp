#pragma once

// Stochastic approximation in sufficient-statistic space for the extended
// model, where beta is itself latent: beta_latent ~ N(beta0, sigma_beta2 I)
// with sigma_beta2 fixed. The complete likelihood is a curved exponential
// family
//   log L = -Psi(eta) + <S(xi), Phi(eta)> + c(xi),
//   S = (sum_i b_i b_i^T, beta_latent),
//   Psi = N/2 log det Sigma + |beta0|^2 / (2 sigma_beta2),
//   Phi = (-Sigma^-1 / 2, beta0 / sigma_beta2),
// and the event terms, which involve beta_latent only, go into c(xi).
// The recursion is stabilised by truncation on random boundaries: when the
// statistic leaves the active compact or jumps by more than eps_k, it is
// reset into the initial compact and the compact index grows.

#include "coxfrail/data_model.hpp"
#include "coxfrail/fit_result.hpp"
#include "coxfrail/frailty_sampler.hpp"
#include "coxfrail/rng.hpp"
#include "coxfrail/saem.hpp"

#include <cmath>

namespace coxfrail {

struct ExtendedParams {
  Vector beta0;
  FrailtyParam gamma = FrailtyParam::scalar(1.0);
  double sigma_beta2 = 10.0;
};

struct ExtendedLatent {
  FrailtyState b;
  Vector beta_latent;
};

struct SuffStats {
  Matrix s_f;     // sum_i b_i b_i^T
  Vector s_beta;  // beta_latent

  // Distance on the scale of the parameters: (s_f / N, s_beta).
  double scaled_norm(std::size_t n_clusters) const;
};

SuffStats sufficient_statistics(const ExtendedLatent& xi);

double extended_log_complete(const ExtendedParams& eta, const SurvivalDataset& data,
                             const RiskSetIndex& index, const ExtendedLatent& xi);

double psi(const ExtendedParams& eta, std::size_t n_clusters);

// <s, Phi(eta)>
double phi_dot(const ExtendedParams& eta, const SuffStats& s);

// argmax_eta { -Psi(eta) + <s, Phi(eta)> }.
ExtendedParams mstep_closed_form(const SuffStats& s, std::size_t n_clusters, double sigma_beta2,
                                 FrailtyParam::Kind kind, bool* projected = nullptr);

// eps_k = k^(-exponent)
struct EpsSchedule {
  double exponent = 0.4;
  double operator()(long k) const { return std::pow(static_cast<double>(k), -exponent); }
};

// Numerical check that sum mu_k diverges while
// sum mu_k^2 + mu_k eps_k^a + (mu_k / eps_k)^p converges. Terms are
// evaluated up to n_terms. Divergence follows from mu_k >= c / k on the
// tail; convergence from a tail log-log slope below -1.05, with the remainder
// beyond n_terms bounded by the integral of the fitted power law.
struct A4Check {
  bool ok = false;
  double mu_partial_sum = 0.0;
  double mu_harmonic_bound = 0.0; // min k mu_k over the second half, must be > 0
  double series_partial_sum = 0.0;
  double series_tail_slope = 0.0; // must be < -1.05
  double tail_bound = 0.0;
};

A4Check check_a4(const StepSchedule& mu, const EpsSchedule& eps, double a, double p,
                 long n_terms = 1000000);

struct TruncatedConfig {
  SaemConfig saem;
  EpsSchedule eps;
  double a = 1.0;
  double p = 2.0;
  double sigma_beta2 = 10.0;
  double radius_scale = 10.0;   // r0 = radius_scale (1 + |s after burn-in|)
  int max_restarts = 50;
  double beta_proposal_sd = 0.1;
  double restart_clamp = 10.0;
};

struct TruncationState {
  int kappa = 0;
  int restarts = 0;
  double r0 = 0.0;

  double radius() const { return r0 * std::ldexp(1.0, kappa); }
};

ExtendedParams default_extended_init(const SurvivalDataset& data, FrailtyParam::Kind kind,
                                     double sigma_beta2 = 10.0);

FitResult truncated_fit(const SurvivalDataset& data, const ExtendedParams& init,
                        const TruncatedConfig& config, Rng& rng);

}  // namespace coxfrail
