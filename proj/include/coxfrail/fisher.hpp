#pragma once

// Louis's missing-information estimate of the observed Fisher information
// of the integrated partial likelihood at theta_hat, from MH draws of the
// frailties:
//   I = -(1/M) sum H_m - (1/M) sum g_m g_m^T + (1/M^2) (sum g_m)(sum g_m)^T
// where g_m, H_m are the score and Hessian of the complete log partial
// likelihood at draw m. The last two terms are minus the empirical score
// covariance with divisor M; the unbiased (M - 1) version differs by the
// factor (M - 1) / M on that covariance.

#include "coxfrail/data_model.hpp"
#include "coxfrail/frailty_sampler.hpp"
#include "coxfrail/rng.hpp"

#include <optional>

namespace coxfrail {

struct FisherEstimate {
  Matrix info_matrix;
  std::optional<Vector> se;      // empty when info_matrix is not positive definite
  std::size_t M = 0;
  std::size_t burn_in = 0;
  double condition_number = 0.0; // max / min eigenvalue, infinite when singular
  double min_eigenvalue = 0.0;
  double accept_rate = 0.0;
};

class LouisAccumulator {
 public:
  explicit LouisAccumulator(Eigen::Index dim);
  void add(const Vector& score, const Matrix& hessian);
  std::size_t count() const { return count_; }
  Matrix information() const;

 private:
  std::size_t count_ = 0;
  Matrix hess_sum_;
  Matrix outer_sum_;
  Vector score_sum_;
};

Matrix louis_information(const std::vector<Vector>& scores, const std::vector<Matrix>& hessians);

// Standard errors sqrt(diag(I^-1)) through a symmetric eigendecomposition.
void fill_standard_errors(FisherEstimate& est);

// burn_in < 0 means M / 10. Draws start from `start` when given, else from 0.
FisherEstimate estimate_fisher(const ModelParams& theta_hat, const SurvivalDataset& data,
                               const RiskSetIndex& index, const McmcConfig& mcmc, std::size_t M,
                               long burn_in, Rng& rng, const FrailtyState* start = nullptr);

}  // namespace coxfrail
