#pragma once

// Random-walk Metropolis-Hastings kernel targeting the posterior of the
// frailties given the data, proportional to the complete partial likelihood.
// Frailties are updated one cluster at a time with a Gaussian proposal
// centred at the current value; the posterior normaliser cancels in the
// acceptance ratio.

#include "coxfrail/data_model.hpp"
#include "coxfrail/rng.hpp"

#include <utility>

namespace coxfrail {

struct McmcConfig {
  Vector proposal_sd;         // per frailty coordinate; empty means 0.5 each
  int n_inner = 5;            // MH sweeps per SAEM iteration
  bool adapt = true;          // Robbins-Monro tuning of proposal_sd during burn-in
  double target_accept = 0.35;
  double adapt_gain = 0.5;    // step on log(proposal_sd) per unit acceptance error

  Vector sd_for(Eigen::Index dim) const;
};

struct McmcDiagnostics {
  double accept_rate = 0.0;
  std::size_t steps = 0;
  std::size_t accepted = 0;
};

// Centred Gaussian log density with cached factorisation.
class GaussianLogDensity {
 public:
  explicit GaussianLogDensity(const Matrix& sigma);
  double operator()(const Eigen::Ref<const Vector>& b) const;

 private:
  Matrix precision_;
  double constant_ = 0.0;
};

// Event part of the log partial likelihood maintained incrementally under
// single-cluster frailty changes. A change of b_c alters the risk-set sums
// of the event times up to the cluster's last observed time only; their
// logs are re-evaluated, everything else is reused.
class ClusterUpdateCache {
 public:
  ClusterUpdateCache(const SurvivalDataset& data, const RiskSetIndex& index);

  void reset(const Vector& beta, const Matrix& frailty);
  double log_partial() const;

  // Change of log_partial() if b_c were replaced by `b_new`; remembered as
  // the pending candidate.
  double propose(std::size_t cluster, const Eigen::Ref<const Vector>& b_new);
  void accept();

  const Matrix& frailty() const { return b_; }

 private:
  double exact_delta(std::size_t cluster, const Eigen::Ref<const Vector>& b_new);

  const SurvivalDataset& data_;
  const RiskSetIndex& index_;
  std::vector<std::size_t> members_;          // per cluster, sorted by #event times <= own time
  std::vector<std::size_t> member_offsets_;
  std::vector<double> deaths_;

  Vector beta_;
  Matrix b_;
  Vector eta_;
  std::vector<double> u_;  // exp(eta - shift)
  double shift_ = 0.0;
  std::vector<double> s0_;
  std::vector<double> log_s0_;
  bool exact_mode_ = false;

  std::size_t cand_cluster_ = 0;
  bool cand_exact_ = false;
  Vector cand_b_;
  std::vector<double> cand_deta_;
  std::vector<double> cand_du_;
  std::vector<double> suffix_;
  std::vector<double> cand_s0_;
  std::vector<double> cand_log_;
  std::size_t cand_span_ = 0;
};

// Reusable sampler bound to one dataset.
class FrailtySampler {
 public:
  FrailtySampler(const SurvivalDataset& data, const RiskSetIndex& index);

  // Runs cfg.n_inner cluster-at-a-time sweeps in place.
  McmcDiagnostics sweep(FrailtyState& state, const Vector& beta, const FrailtyParam& gamma,
                        const McmcConfig& cfg, Rng& rng);

  // Event part of the log partial likelihood at the state left by the last sweep.
  double last_log_partial() const { return cache_.log_partial(); }

 private:
  const SurvivalDataset& data_;
  ClusterUpdateCache cache_;
};

std::pair<FrailtyState, McmcDiagnostics> mh_sweep(const FrailtyState& state, const ModelParams& params,
                                                  const SurvivalDataset& data, const RiskSetIndex& index,
                                                  const McmcConfig& cfg, Rng& rng);

// Multiplicative update of the proposal scale toward the target acceptance.
McmcConfig adapt_proposal(const McmcDiagnostics& diag, McmcConfig cfg);

}  // namespace coxfrail
