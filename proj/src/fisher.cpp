#include "coxfrail/fisher.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/partial_likelihood.hpp"

#include <cmath>
#include <limits>

namespace coxfrail {

LouisAccumulator::LouisAccumulator(Eigen::Index dim)
    : hess_sum_(Matrix::Zero(dim, dim)), outer_sum_(Matrix::Zero(dim, dim)), score_sum_(Vector::Zero(dim)) {}

void LouisAccumulator::add(const Vector& score, const Matrix& hessian) {
  if (score.size() != score_sum_.size() || hessian.rows() != hess_sum_.rows() || hessian.cols() != hess_sum_.cols())
    throw_input("LouisAccumulator: dimension mismatch");
  if (!score.allFinite() || !hessian.allFinite()) throw_numerical("non-finite derivative in the information estimate");
  ++count_;
  hess_sum_ += hessian;
  outer_sum_.noalias() += score * score.transpose();
  score_sum_ += score;
}

Matrix LouisAccumulator::information() const {
  if (count_ == 0) throw_input("LouisAccumulator is empty");
  const double m = static_cast<double>(count_);
  const Vector mean = score_sum_ / m;
  Matrix info = -hess_sum_ / m - outer_sum_ / m + mean * mean.transpose();
  return 0.5 * (info + info.transpose());
}

Matrix louis_information(const std::vector<Vector>& scores, const std::vector<Matrix>& hessians) {
  if (scores.empty() || scores.size() != hessians.size()) throw_input("louis_information: need matching draws");
  LouisAccumulator acc(scores.front().size());
  for (std::size_t m = 0; m < scores.size(); ++m) acc.add(scores[m], hessians[m]);
  return acc.information();
}

void fill_standard_errors(FisherEstimate& est) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(est.info_matrix);
  if (eig.info() != Eigen::Success) throw_numerical("eigendecomposition of the information matrix failed");
  const Vector values = eig.eigenvalues();
  est.min_eigenvalue = values.minCoeff();
  const double max_abs = values.cwiseAbs().maxCoeff();
  est.condition_number = est.min_eigenvalue > 0.0 ? values.maxCoeff() / est.min_eigenvalue
                                                  : std::numeric_limits<double>::infinity();
  est.se.reset();
  if (!(est.min_eigenvalue > 1e-12 * max_abs) || !(max_abs > 0.0)) return;
  const Matrix& v = eig.eigenvectors();
  const Vector inv_diag = (v * values.cwiseInverse().asDiagonal() * v.transpose()).diagonal();
  est.se = inv_diag.cwiseSqrt();
}

FisherEstimate estimate_fisher(const ModelParams& theta_hat, const SurvivalDataset& data, const RiskSetIndex& index,
                               const McmcConfig& mcmc, std::size_t M, long burn_in, Rng& rng,
                               const FrailtyState* start) {
  if (M < 100) throw_input("the information estimate needs M >= 100 draws");
  const std::size_t burn = burn_in < 0 ? M / 10 : static_cast<std::size_t>(burn_in);
  const Eigen::Index f = data.n_frailty();
  const Eigen::Index nb = theta_hat.beta.size();
  const Eigen::Index c = theta_hat.gamma.n_params();
  if (nb != data.n_fixed() || theta_hat.gamma.dim() != f) throw_input("estimate_fisher: dimension mismatch");

  McmcConfig cfg = mcmc;
  cfg.proposal_sd = cfg.sd_for(f);
  cfg.adapt = false;
  FrailtySampler sampler(data, index);
  FrailtyState b = start ? *start : FrailtyState::zeros(data.n_clusters(), f);
  if (b.n_clusters() != data.n_clusters() || b.b.cols() != f) throw_input("estimate_fisher: start state mismatch");

  const double n = static_cast<double>(data.n_clusters());
  LouisAccumulator acc(nb + c);
  Vector g(nb + c);
  Matrix h = Matrix::Zero(nb + c, nb + c);
  McmcDiagnostics pooled;
  for (std::size_t it = 0; it < burn + M; ++it) {
    const McmcDiagnostics d = sampler.sweep(b, theta_hat.beta, theta_hat.gamma, cfg, rng);
    if (it < burn) continue;
    pooled.steps += d.steps;
    pooled.accepted += d.accepted;
    const CoxDerivatives cd = cox_partial(data, index, theta_hat.beta, frailty_offsets(data, b), 2);
    const Matrix moment = frailty_moment(b);
    g.head(nb) = cd.grad;
    g.tail(c) = grad_gamma_from_moment(theta_hat.gamma, moment, n);
    h.topLeftCorner(nb, nb) = cd.hess;
    h.bottomRightCorner(c, c) = hessian_gamma_from_moment(theta_hat.gamma, moment, n);
    acc.add(g, h);
  }

  FisherEstimate est;
  est.info_matrix = acc.information();
  est.M = M;
  est.burn_in = burn;
  est.accept_rate = pooled.steps ? static_cast<double>(pooled.accepted) / static_cast<double>(pooled.steps) : 0.0;
  fill_standard_errors(est);
  return est;
}

}  // namespace coxfrail
