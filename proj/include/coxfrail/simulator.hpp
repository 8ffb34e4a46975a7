#pragma once

// Clustered survival data generator for the Weibull / Gompertz designs with
// Gaussian, correlated Gaussian or two-component mixture frailties.

#include "coxfrail/data_model.hpp"
#include "coxfrail/rng.hpp"

#include <cstdint>
#include <variant>

namespace coxfrail {

struct WeibullHazard {   // h0(t) = lambda rho t^(rho - 1)
  double lambda = 0.01;
  double rho = 1.5;
};

struct GompertzHazard {  // h0(t) = lambda exp(alpha t)
  double lambda = 0.08;
  double alpha = 2.0;
};

using Baseline = std::variant<WeibullHazard, GompertzHazard>;

struct GaussianFrailty {
  double variance = 0.7;
};

// b = (b0, b1) ~ N(0, sigma); hazard exp(b0 + Z^T (beta + b1)).
struct GaussianCovFrailty {
  Matrix sigma;
};

// 1/2 N(-10, 2) + 1/2 N(10, 2) (variances).
struct MixtureFrailty {
  double separation = 10.0;
  double variance = 2.0;
};

using FrailtyLaw = std::variant<GaussianFrailty, GaussianCovFrailty, MixtureFrailty>;

struct SimDesign {
  std::size_t n_clusters = 50;
  std::vector<std::size_t> cluster_sizes{4};  // one entry: constant size
  Baseline baseline = WeibullHazard{};
  Vector beta = Vector::Constant(2, 0.0);
  FrailtyLaw frailty = GaussianFrailty{};
  double covariate_p = 0.5;
  double censor_target = 0.0;
  std::uint64_t seed = 1;
};

struct SimulatedData {
  SurvivalDataset data;
  FrailtyState true_frailty;
  double censoring_bound = 0.0;  // c*, 0 when uncensored
};

SimulatedData simulate(const SimDesign& design);

// Inverse cumulative hazard: event time for a unit-exponential draw `e`
// and relative risk exp(eta).
double event_time(const Baseline& baseline, double e, double eta);
double cumulative_hazard(const Baseline& baseline, double t);

// n sizes drawn log-uniformly on [lo, hi] and rounded.
std::vector<std::size_t> log_uniform_sizes(std::size_t n, double lo, double hi, Rng& rng);

// Synthetic stand-in for the bladder-cancer application: 39 clusters of
// 20-250 patients, one Bernoulli(0.8) treatment covariate, correlated
// frailty, about 51% censoring.
SimulatedData eortc_analog(std::uint64_t seed);

}  // namespace coxfrail
