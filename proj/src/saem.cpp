#include "coxfrail/saem.hpp"

#include "coxfrail/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coxfrail {

double StepSchedule::mu(long k) const {
  if (k < 1) throw_input("step index starts at 1");
  if (k <= k0) return 1.0;
  return 1.0 / static_cast<double>(k - k0);
}

// ---------------------------------------------------------------------------

QAccumulator::QAccumulator(const SurvivalDataset& data, const RiskSetIndex& index, std::size_t cap)
    : data_(data), index_(index), cap_(std::max<std::size_t>(cap, 1)) {
  const Eigen::Index nb = data.n_fixed();
  const auto n = static_cast<Eigen::Index>(data.n_individuals());
  z_sorted_.resize(n, nb);
  for (Eigen::Index p = 0; p < n; ++p) z_sorted_.row(p) = data.z().row(static_cast<Eigen::Index>(index.order[static_cast<std::size_t>(p)]));
  event_z_sum_ = Vector::Zero(nb);
  for (std::size_t k : index.event_members) event_z_sum_ += data.z().row(static_cast<Eigen::Index>(k)).transpose();
  deaths_.resize(index.n_event_times());
  for (std::size_t e = 0; e < deaths_.size(); ++e) deaths_[e] = static_cast<double>(index.n_deaths(e));
  moment_ = Matrix::Zero(data.n_frailty(), data.n_frailty());
}

void QAccumulator::update(double mu, const FrailtyState& frailty) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw_input("step size must lie in [0, 1]");
  if (frailty.n_clusters() != data_.n_clusters() || frailty.b.cols() != data_.n_frailty())
    throw_input("QAccumulator: frailty state does not match the dataset");
  ++k_;
  for (auto& s : history_) s.weight *= (1.0 - mu);
  while (!history_.empty() && history_.front().weight == 0.0) history_.pop_front();
  moment_ = (1.0 - mu) * moment_ + mu * frailty_moment(frailty);
  total_weight_ = (1.0 - mu) * total_weight_ + mu;
  if (mu == 0.0) return;

  Snapshot snap;
  snap.weight = mu;
  const Vector omega = frailty_offsets(data_, frailty);
  const std::size_t n = data_.n_individuals();
  snap.omega.resize(n);
  for (std::size_t p = 0; p < n; ++p) snap.omega[p] = omega(static_cast<Eigen::Index>(index_.order[p]));
  snap.shift = omega.maxCoeff();
  snap.u.resize(n);
  for (std::size_t p = 0; p < n; ++p) snap.u[p] = std::exp(snap.omega[p] - snap.shift);
  for (std::size_t k : index_.event_members) snap.event_offset += omega(static_cast<Eigen::Index>(k));
  history_.push_back(std::move(snap));

  if (history_.size() > cap_) {
    history_.pop_front();
    double sum = 0.0;
    for (const auto& s : history_) sum += s.weight;
    for (auto& s : history_) s.weight *= total_weight_ / sum;
  }
}

std::vector<double> QAccumulator::weights() const {
  std::vector<double> w;
  w.reserve(history_.size());
  for (const auto& s : history_) w.push_back(s.weight);
  return w;
}

Matrix QAccumulator::frailty_statistic() const {
  if (total_weight_ <= 0.0) throw_input("QAccumulator is empty");
  return moment_ / (total_weight_ * static_cast<double>(data_.n_clusters()));
}

void QAccumulator::snapshot_pass(const Snapshot& s, const std::vector<double>& ezb, double zb_shift,
                                 const Vector& beta, int order, CoxDerivatives& acc) const {
  const Eigen::Index nb = data_.n_fixed();
  const std::size_t n = data_.n_individuals();
  double s0 = 0.0;
  double log_sum = 0.0;
  std::vector<double> s1(static_cast<std::size_t>(nb), 0.0);
  std::vector<double> s2(static_cast<std::size_t>(nb * nb), 0.0);
  Vector grad = Vector::Zero(nb);
  Matrix hess = Matrix::Zero(nb, nb);
  double total_deaths = 0.0;
  const double* z = z_sorted_.data();

  auto e = static_cast<long>(index_.n_event_times()) - 1;
  for (std::size_t p = n; p-- > 0;) {
    const double r = ezb[p] * s.u[p];
    s0 += r;
    if (order >= 1) {
      const double* zp = z + p * static_cast<std::size_t>(nb);
      for (Eigen::Index a = 0; a < nb; ++a) {
        const double ra = r * zp[a];
        s1[static_cast<std::size_t>(a)] += ra;
        if (order >= 2)
          for (Eigen::Index c = 0; c <= a; ++c) s2[static_cast<std::size_t>(a * nb + c)] += ra * zp[c];
      }
    }
    while (e >= 0 && index_.risk_start[static_cast<std::size_t>(e)] == p) {
      if (!(s0 > std::numeric_limits<double>::min())) {
        exact_snapshot_pass(s, beta, order, acc);
        return;
      }
      const double d = deaths_[static_cast<std::size_t>(e)];
      total_deaths += d;
      log_sum += d * std::log(s0);
      if (order >= 1) {
        for (Eigen::Index a = 0; a < nb; ++a) {
          const double za = s1[static_cast<std::size_t>(a)] / s0;
          grad(a) -= d * za;
          if (order >= 2)
            for (Eigen::Index c = 0; c <= a; ++c)
              hess(a, c) -= d * (s2[static_cast<std::size_t>(a * nb + c)] / s0 - za * s1[static_cast<std::size_t>(c)] / s0);
        }
      }
      --e;
    }
  }
  double value = s.event_offset - log_sum - total_deaths * (zb_shift + s.shift);
  if (nb > 0) value += event_z_sum_.dot(beta);
  acc.value += s.weight * value;
  if (order >= 1) acc.grad += s.weight * (grad + event_z_sum_);
  if (order >= 2) acc.hess += s.weight * Matrix(hess.selfadjointView<Eigen::Lower>());
}

void QAccumulator::exact_snapshot_pass(const Snapshot& s, const Vector& beta, int order, CoxDerivatives& acc) const {
  Vector offset(static_cast<Eigen::Index>(data_.n_individuals()));
  for (std::size_t p = 0; p < s.omega.size(); ++p) offset(static_cast<Eigen::Index>(index_.order[p])) = s.omega[p];
  const CoxDerivatives d = cox_partial(data_, index_, beta, offset, order);
  acc.value += s.weight * d.value;
  if (order >= 1) acc.grad += s.weight * d.grad;
  if (order >= 2) acc.hess += s.weight * d.hess;
}

CoxDerivatives QAccumulator::beta_objective(const Vector& beta, int order) const {
  const Eigen::Index nb = data_.n_fixed();
  if (beta.size() != nb) throw_input("beta_objective: dimension mismatch");
  if (history_.empty()) throw_input("QAccumulator is empty");
  const std::size_t n = data_.n_individuals();
  std::vector<double> zb(n, 0.0);
  if (nb > 0) {
    const Vector v = z_sorted_ * beta;
    for (std::size_t p = 0; p < n; ++p) zb[p] = v(static_cast<Eigen::Index>(p));
  }
  const double zb_shift = *std::max_element(zb.begin(), zb.end());
  std::vector<double> ezb(n);
  for (std::size_t p = 0; p < n; ++p) ezb[p] = std::exp(zb[p] - zb_shift);

  CoxDerivatives acc;
  if (order >= 1) acc.grad = Vector::Zero(nb);
  if (order >= 2) acc.hess = Matrix::Zero(nb, nb);
  for (const auto& s : history_) snapshot_pass(s, ezb, zb_shift, beta, order, acc);
  acc.value /= total_weight_;
  if (order >= 1) acc.grad /= total_weight_;
  if (order >= 2) acc.hess /= total_weight_;
  return acc;
}

double QAccumulator::value(const ModelParams& params) const {
  if (params.gamma.dim() != data_.n_frailty()) throw_input("QAccumulator::value: dimension mismatch");
  const double partial = beta_objective(params.beta, 0).value * total_weight_;
  const auto n = static_cast<double>(data_.n_clusters());
  const auto f = static_cast<double>(data_.n_frailty());
  Eigen::LLT<Matrix> llt(params.gamma.sigma());
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Matrix inv = llt.solve(Matrix::Identity(params.gamma.dim(), params.gamma.dim()));
  const double prior = -0.5 * total_weight_ * n * (f * 1.8378770664093453 + logdet) -
                       0.5 * (inv.cwiseProduct(moment_)).sum();
  return partial + prior;
}

// ---------------------------------------------------------------------------

Matrix project_spd(const Matrix& m, double floor, bool* projected) {
  if (!m.allFinite()) throw_numerical("SPD projection failed: non-finite matrix");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw_numerical("SPD projection failed");
  Vector values = eig.eigenvalues();
  const bool clamp = (values.array() < floor).any();
  if (projected) *projected = clamp;
  if (!clamp) return sym;
  values = values.cwiseMax(floor);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

MStepResult maximization_step(const QAccumulator& acc, const ModelParams& current, const MStepOptions& options) {
  MStepResult out{current, false, 0};
  if (!options.fix_gamma) {
    const Matrix sigma = project_spd(acc.frailty_statistic(), 1e-8, &out.spd_projected);
    out.params.gamma = current.gamma.kind() == FrailtyParam::Kind::ScalarVariance
                           ? FrailtyParam::scalar(sigma(0, 0))
                           : FrailtyParam::covariance(sigma);
  }
  if (current.beta.size() == 0) return out;

  constexpr double kArmijo = 1e-4;
  Vector beta = current.beta;
  CoxDerivatives cur = acc.beta_objective(beta, 2);
  for (int it = 0; it < options.max_iter; ++it) {
    Vector dir;
    Eigen::LDLT<Matrix> ldlt(-cur.hess);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0) {
      dir = ldlt.solve(cur.grad);
    } else {
      dir = cur.grad;
    }
    double slope = cur.grad.dot(dir);
    if (!(slope > 0.0)) {
      dir = cur.grad;
      slope = cur.grad.squaredNorm();
    }
    if (dir.norm() < options.tol) {
      beta += dir;
      ++out.inner_iterations;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    CoxDerivatives next;
    for (int ls = 0; ls < 40; ++ls) {
      next = acc.beta_objective(beta + t * dir, 2);
      if (std::isfinite(next.value) && next.value >= cur.value + kArmijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    beta += t * dir;
    cur = std::move(next);
    ++out.inner_iterations;
    if (t * dir.norm() < options.tol) break;
  }
  out.params.beta = beta;
  return out;
}

bool check_stop(const std::vector<Vector>& trajectory, double eps, int window) {
  if (window < 1) throw_input("stopping window must be positive");
  const auto w = static_cast<std::size_t>(window);
  if (trajectory.size() < w + 1) return false;
  for (std::size_t i = 0; i < w; ++i) {
    const Vector& cur = trajectory[trajectory.size() - 1 - i];
    const Vector& prev = trajectory[trajectory.size() - 2 - i];
    const double denom = prev.norm();
    if (denom == 0.0) return false;
    if (!((cur - prev).norm() / denom < eps)) return false;
  }
  return true;
}

Vector cox_fit(const SurvivalDataset& data, const RiskSetIndex& index, double tol, int max_iter) {
  QAccumulator acc(data, index, 1);
  acc.update(1.0, FrailtyState::zeros(data.n_clusters(), data.n_frailty()));
  ModelParams start;
  start.beta = Vector::Zero(data.n_fixed());
  start.gamma = data.n_frailty() == 1 ? FrailtyParam::scalar(1.0)
                                      : FrailtyParam::covariance(Matrix::Identity(data.n_frailty(), data.n_frailty()));
  MStepOptions opt;
  opt.fix_gamma = true;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return maximization_step(acc, start, opt).params.beta;
}

ModelParams default_init(const SurvivalDataset& data, FrailtyParam::Kind kind) {
  const RiskSetIndex index = build_risk_index(data);
  ModelParams p;
  p.beta = cox_fit(data, index);
  const Eigen::Index f = data.n_frailty();
  if (kind == FrailtyParam::Kind::ScalarVariance) {
    if (f != 1) throw_input("a scalar frailty variance needs a one-column frailty design");
    p.gamma = FrailtyParam::scalar(1.0);
  } else {
    p.gamma = FrailtyParam::covariance(0.5 * Matrix::Identity(f, f));
  }
  return p;
}

FrailtyState prior_draw(const FrailtyParam& gamma, std::size_t n_clusters, Rng& rng) {
  const Eigen::LLT<Matrix> llt(gamma.sigma());
  if (llt.info() != Eigen::Success) throw_input("initial frailty covariance is not positive definite");
  std::normal_distribution<double> normal(0.0, 1.0);
  FrailtyState b = FrailtyState::zeros(n_clusters, gamma.dim());
  for (Eigen::Index i = 0; i < b.b.rows(); ++i) {
    Vector x(gamma.dim());
    for (Eigen::Index a = 0; a < x.size(); ++a) x(a) = normal(rng);
    b.b.row(i) = (llt.matrixL() * x).transpose();
  }
  return b;
}

FitResult saem_fit(const SurvivalDataset& data, const ModelParams& init, const SaemConfig& config, Rng& rng) {
  if (init.beta.size() != data.n_fixed() || init.gamma.dim() != data.n_frailty())
    throw_input("initial parameters do not match the dataset dimensions");
  if (!init.to_vector().allFinite()) throw_input("initial parameters must be finite");
  const RiskSetIndex index = build_risk_index(data);
  FrailtySampler sampler(data, index);
  QAccumulator acc(data, index, config.history_cap);

  McmcConfig mcmc = config.mcmc;
  mcmc.proposal_sd = mcmc.sd_for(data.n_frailty());
  MStepOptions mopt{config.fix_gamma, config.inner_tol, config.inner_max};

  FitResult res;
  res.algorithm = "algorithm1";
  res.theta_hat = init;
  res.param_names = init.names();
  res.trajectory.push_back(init.to_vector());
  // Chain starts from a prior draw: a start at zero makes the first
  // no-memory M-step see an unmixed, shrunken frailty sample.
  FrailtyState b = prior_draw(init.gamma, data.n_clusters(), rng);

  ModelParams theta = init;
  for (int k = 1; k <= config.stop.max_iter; ++k) {
    const McmcDiagnostics diag = sampler.sweep(b, theta.beta, theta.gamma, mcmc, rng);
    res.diagnostics.steps += diag.steps;
    res.diagnostics.accepted += diag.accepted;
    if (mcmc.adapt && k <= config.schedule.k0) mcmc = adapt_proposal(diag, mcmc);

    const double mu = config.schedule.mu(k);
    acc.update(mu, b);
    MStepResult m = maximization_step(acc, theta, mopt);
    theta = std::move(m.params);
    res.spd_projected = res.spd_projected || m.spd_projected;

    const Vector v = theta.to_vector();
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > config.divergence_bound)
      throw Error(ErrorKind::Diverged, "diverged");
    res.trajectory.push_back(v);
    TraceRow row;
    row.iteration = k;
    row.theta = v;
    row.accept_rate = diag.accept_rate;
    row.mu = mu;
    res.trace.push_back(std::move(row));
    res.iterations = k;
    if (k > config.schedule.k0 && check_stop(res.trajectory, config.stop.eps, config.stop.window)) {
      res.converged = true;
      break;
    }
  }
  res.theta_hat = theta;
  res.estimate = theta.to_vector();
  res.final_frailty = b;
  res.proposal_sd = mcmc.proposal_sd;
  res.diagnostics.accept_rate = res.diagnostics.steps
                                    ? static_cast<double>(res.diagnostics.accepted) / static_cast<double>(res.diagnostics.steps)
                                    : 0.0;
  return res;
}

}  // namespace coxfrail
