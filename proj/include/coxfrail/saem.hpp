#pragma once

// MCMC-SAEM maximisation of the integrated partial likelihood:
//   simulate b_k with the MH kernel at theta_{k-1},
//   Q_k = Q_{k-1} + mu_k (log L^p(.; b_k) - Q_{k-1}),
//   theta_k = argmax Q_k.
// Q_k is kept in its unrolled form, a weighted history of frailty
// snapshots with weights mu_i prod_{j>i} (1 - mu_j); the gamma part only
// needs the weighted second moment of the frailties and is exact.

#include "coxfrail/data_model.hpp"
#include "coxfrail/fit_result.hpp"
#include "coxfrail/frailty_sampler.hpp"
#include "coxfrail/partial_likelihood.hpp"
#include "coxfrail/rng.hpp"

#include <deque>

namespace coxfrail {

// mu_k = 1 for k <= k0, 1 / (k - k0) afterwards.
struct StepSchedule {
  int k0 = 100;
  double mu(long k) const;
};

struct StopRule {
  double eps = 1e-4;
  int window = 3;
  int max_iter = 2000;
};

struct SaemConfig {
  StepSchedule schedule;
  McmcConfig mcmc;
  StopRule stop;
  std::size_t history_cap = 500;
  bool fix_gamma = false;   // keep gamma at its initial value
  double inner_tol = 1e-8;  // beta ascent step tolerance
  int inner_max = 25;
  double divergence_bound = 1e6;
};

class QAccumulator {
 public:
  QAccumulator(const SurvivalDataset& data, const RiskSetIndex& index, std::size_t cap = 500);

  // Q_k = (1 - mu) Q_{k-1} + mu log L^p(.; b); Q_0 = 0.
  void update(double mu, const FrailtyState& frailty);

  long k() const { return k_; }
  std::size_t size() const { return history_.size(); }
  std::vector<double> weights() const;
  double total_weight() const { return total_weight_; }
  double initial_weight() const { return 1.0 - total_weight_; }

  // Weighted average of (1/N) sum_i b_i b_i^T, normalised by total_weight().
  Matrix frailty_statistic() const;

  // Q_k(theta).
  double value(const ModelParams& params) const;

  // sum_s w_s log L_cond(beta; b_s) / total_weight and its derivatives.
  CoxDerivatives beta_objective(const Vector& beta, int order) const;

 private:
  struct Snapshot {
    double weight = 0.0;
    std::vector<double> u;      // exp(omega - shift), by time order
    std::vector<double> omega;  // W b, by time order
    double shift = 0.0;
    double event_offset = 0.0;  // sum of omega over events
  };

  void snapshot_pass(const Snapshot& s, const std::vector<double>& ezb, double zb_shift,
                     const Vector& beta, int order, CoxDerivatives& acc) const;
  void exact_snapshot_pass(const Snapshot& s, const Vector& beta, int order, CoxDerivatives& acc) const;

  const SurvivalDataset& data_;
  const RiskSetIndex& index_;
  std::size_t cap_;
  RowMatrix z_sorted_;
  Vector event_z_sum_;
  std::vector<double> deaths_;
  std::deque<Snapshot> history_;
  Matrix moment_;              // weighted sum_i b_i b_i^T
  double total_weight_ = 0.0;  // 1 - prod(1 - mu)
  long k_ = 0;
};

struct MStepOptions {
  bool fix_gamma = false;
  double tol = 1e-8;
  int max_iter = 25;
};

struct MStepResult {
  ModelParams params;
  bool spd_projected = false;
  int inner_iterations = 0;
};

MStepResult maximization_step(const QAccumulator& acc, const ModelParams& current,
                              const MStepOptions& options = {});

// Projection onto symmetric matrices with eigenvalues >= floor.
Matrix project_spd(const Matrix& m, double floor, bool* projected = nullptr);

// True when ||theta_k - theta_{k-1}|| / ||theta_{k-1}|| < eps held for the
// last `window` consecutive iterations.
bool check_stop(const std::vector<Vector>& trajectory, double eps = 1e-4, int window = 3);

// Ordinary Cox partial-likelihood MLE (frailties fixed at zero).
Vector cox_fit(const SurvivalDataset& data, const RiskSetIndex& index, double tol = 1e-10, int max_iter = 50);

// Starting point: beta from cox_fit, gamma = 1 (shared) or 0.5 I.
ModelParams default_init(const SurvivalDataset& data, FrailtyParam::Kind kind);

// Independent N(0, Sigma) frailties, the starting state of the chain.
FrailtyState prior_draw(const FrailtyParam& gamma, std::size_t n_clusters, Rng& rng);

FitResult saem_fit(const SurvivalDataset& data, const ModelParams& init, const SaemConfig& config, Rng& rng);

}  // namespace coxfrail
