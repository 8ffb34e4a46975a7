#include "coxfrail/weibull.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/frailty_sampler.hpp"
#include "coxfrail/partial_likelihood.hpp"

#include <cmath>

namespace coxfrail {

namespace {

void check_params(const WeibullParams& p, const SurvivalDataset& data) {
  if (!(p.lambda > 0.0) || !(p.rho > 0.0)) throw_input("Weibull lambda and rho must be positive");
  if (p.beta.size() != data.n_fixed() || p.gamma.dim() != data.n_frailty())
    throw_input("Weibull parameters do not match the dataset dimensions");
}

// Stochastic approximation of the complete log likelihood in
// u = (log lambda, log rho, beta):
//   D (a + r) + (rho - 1) sum_ev log X + sum_ev Z beta - lambda sum_j X_j^rho exp(Z_j beta) A_j
// with A_j the averaged exp(W_j b).
class WeibullQ {
 public:
  explicit WeibullQ(const SurvivalDataset& data) : data_(data) {
    const std::size_t n = data.n_individuals();
    log_x_.resize(n);
    log_a_.assign(n, 0.0);
    a_.assign(n, 1.0);
    event_z_ = Vector::Zero(data.n_fixed());
    for (std::size_t j = 0; j < n; ++j) {
      log_x_[j] = std::log(data.time(j));
      if (data.status(j)) {
        deaths_ += 1.0;
        event_log_x_ += log_x_[j];
        event_z_ += data.z().row(static_cast<Eigen::Index>(j)).transpose();
      }
    }
    moment_ = Matrix::Zero(data.n_frailty(), data.n_frailty());
  }

  void update(double mu, const FrailtyState& frailty) {
    const Vector omega = frailty_offsets(data_, frailty);
    for (std::size_t j = 0; j < a_.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      a_[j] = (1.0 - mu) * a_[j] + mu * std::exp(omega(jj));
      log_a_[j] = std::log(a_[j]);
    }
    moment_ = (1.0 - mu) * moment_ + mu * frailty_moment(frailty);
  }

  Matrix frailty_statistic() const { return moment_ / static_cast<double>(data_.n_clusters()); }

  CoxDerivatives baseline_objective(const Vector& u, int order) const {
    const Eigen::Index nb = data_.n_fixed();
    const double lambda = std::exp(u(0));
    const double rho = std::exp(u(1));
    const Vector beta = u.tail(nb);
    double st = 0.0, stl = 0.0, stll = 0.0;
    Vector stz = Vector::Zero(nb), stlz = Vector::Zero(nb);
    Matrix stzz = Matrix::Zero(nb, nb);
    for (std::size_t j = 0; j < log_x_.size(); ++j) {
      const auto z = data_.z().row(static_cast<Eigen::Index>(j)).transpose();
      const double t = std::exp(rho * log_x_[j] + z.dot(beta) + log_a_[j]);
      st += t;
      if (order >= 1) {
        stl += t * log_x_[j];
        stz += t * z;
      }
      if (order >= 2) {
        stll += t * log_x_[j] * log_x_[j];
        stlz += t * log_x_[j] * z;
        stzz.noalias() += t * z * z.transpose();
      }
    }
    CoxDerivatives out;
    out.value = deaths_ * (u(0) + u(1)) + (rho - 1.0) * event_log_x_ + event_z_.dot(beta) - lambda * st;
    if (order >= 1) {
      out.grad.resize(2 + nb);
      out.grad(0) = deaths_ - lambda * st;
      out.grad(1) = deaths_ + rho * event_log_x_ - lambda * rho * stl;
      out.grad.tail(nb) = event_z_ - lambda * stz;
    }
    if (order >= 2) {
      out.hess.resize(2 + nb, 2 + nb);
      out.hess(0, 0) = -lambda * st;
      out.hess(0, 1) = out.hess(1, 0) = -lambda * rho * stl;
      out.hess(1, 1) = rho * event_log_x_ - lambda * rho * stl - lambda * rho * rho * stll;
      out.hess.block(0, 2, 1, nb) = -lambda * stz.transpose();
      out.hess.block(2, 0, nb, 1) = -lambda * stz;
      out.hess.block(1, 2, 1, nb) = -lambda * rho * stlz.transpose();
      out.hess.block(2, 1, nb, 1) = -lambda * rho * stlz;
      out.hess.bottomRightCorner(nb, nb) = -lambda * stzz;
    }
    return out;
  }

 private:
  const SurvivalDataset& data_;
  std::vector<double> log_x_;
  std::vector<double> a_;
  std::vector<double> log_a_;
  double deaths_ = 0.0;
  double event_log_x_ = 0.0;
  Vector event_z_;
  Matrix moment_;
};

// Damped Newton ascent with Armijo backtracking; gradient direction when
// the Hessian is not negative definite.
Vector newton_ascent(const WeibullQ& q, Vector u, double tol, int max_iter) {
  constexpr double kArmijo = 1e-4;
  CoxDerivatives cur = q.baseline_objective(u, 2);
  for (int it = 0; it < max_iter; ++it) {
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
    if (dir.norm() < tol) return u + dir;
    double t = 1.0;
    bool accepted = false;
    CoxDerivatives next;
    for (int ls = 0; ls < 40; ++ls) {
      next = q.baseline_objective(u + t * dir, 2);
      if (std::isfinite(next.value) && next.value >= cur.value + kArmijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    u += t * dir;
    cur = std::move(next);
    if (t * dir.norm() < tol) break;
  }
  return u;
}

Vector pack(const WeibullParams& p) {
  Vector u(2 + p.beta.size());
  u << std::log(p.lambda), std::log(p.rho), p.beta;
  return u;
}

void unpack(const Vector& u, WeibullParams& p) {
  p.lambda = std::exp(u(0));
  p.rho = std::exp(u(1));
  p.beta = u.tail(u.size() - 2);
}

}  // namespace

Vector WeibullParams::to_vector() const {
  const Vector g = gamma.to_vector();
  Vector v(2 + beta.size() + g.size());
  v << lambda, rho, beta, g;
  return v;
}

std::vector<std::string> WeibullParams::names() const {
  std::vector<std::string> out{"lambda", "rho"};
  for (const auto& n : ModelParams{beta, gamma}.names()) out.push_back(n);
  return out;
}

double log_complete_weibull(const WeibullParams& p, const SurvivalDataset& data, const FrailtyState& frailty) {
  check_params(p, data);
  const Vector omega = frailty_offsets(data, frailty);
  double total = log_frailty_prior(p.gamma, frailty);
  const double base = std::log(p.lambda) + std::log(p.rho);
  for (std::size_t j = 0; j < data.n_individuals(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double eta = data.z().row(jj).dot(p.beta) + omega(jj);
    const double lx = std::log(data.time(j));
    if (data.status(j)) total += base + (p.rho - 1.0) * lx + eta;
    total -= p.lambda * std::exp(p.rho * lx + eta);
  }
  return total;
}

Vector weibull_gradient(const WeibullParams& p, const SurvivalDataset& data, const FrailtyState& frailty) {
  check_params(p, data);
  const Eigen::Index nb = data.n_fixed();
  const Vector omega = frailty_offsets(data, frailty);
  Vector g = Vector::Zero(2 + nb);
  for (std::size_t j = 0; j < data.n_individuals(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto z = data.z().row(jj).transpose();
    const double lx = std::log(data.time(j));
    const double h = std::exp(p.rho * lx + z.dot(p.beta) + omega(jj));
    if (data.status(j)) {
      g(0) += 1.0 / p.lambda;
      g(1) += 1.0 / p.rho + lx;
      g.tail(nb) += z;
    }
    g(0) -= h;
    g(1) -= p.lambda * h * lx;
    g.tail(nb) -= p.lambda * h * z;
  }
  return g;
}

WeibullParams weibull_init(const SurvivalDataset& data, FrailtyParam::Kind kind) {
  if (data.n_events() == 0) throw_input("no events");
  const ModelParams mp = default_init(data, kind);
  WeibullQ q(data);
  double total_time = 0.0;
  for (double t : data.times()) total_time += t;
  WeibullParams p;
  p.rho = 1.0;
  p.lambda = static_cast<double>(data.n_events()) / total_time;
  p.beta = Vector::Zero(data.n_fixed());
  p.gamma = mp.gamma;
  unpack(newton_ascent(q, pack(p), 1e-10, 100), p);
  return p;
}

McmcDiagnostics weibull_sweep(FrailtyState& state, const WeibullParams& p, const SurvivalDataset& data,
                              const McmcConfig& cfg, Rng& rng) {
  check_params(p, data);
  const Eigen::Index f = data.n_frailty();
  const Vector sd = cfg.sd_for(f);
  const GaussianLogDensity log_g(p.gamma.sigma());
  std::vector<double> c(data.n_individuals());
  for (std::size_t j = 0; j < c.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    c[j] = p.lambda * std::exp(p.rho * std::log(data.time(j)) + data.z().row(jj).dot(p.beta));
  }
  auto cluster_loglik = [&](std::size_t i, const Vector& b) {
    double v = log_g(b);
    for (std::size_t j = data.cluster_begin(i); j < data.cluster_end(i); ++j) {
      const double omega = data.w().row(static_cast<Eigen::Index>(j)).dot(b);
      if (data.status(j)) v += omega;
      v -= c[j] * std::exp(omega);
    }
    return v;
  };

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  McmcDiagnostics diag;
  Vector cur(f), cand(f);
  for (int s = 0; s < cfg.n_inner; ++s) {
    for (std::size_t i = 0; i < data.n_clusters(); ++i) {
      cur = state.b.row(static_cast<Eigen::Index>(i)).transpose();
      for (Eigen::Index a = 0; a < f; ++a) cand(a) = cur(a) + sd(a) * normal(rng);
      ++diag.steps;
      const double delta = cluster_loglik(i, cand) - cluster_loglik(i, cur);
      if (std::isfinite(delta) && std::log(unif(rng)) < delta) {
        state.b.row(static_cast<Eigen::Index>(i)) = cand.transpose();
        ++diag.accepted;
      }
    }
  }
  diag.accept_rate = diag.steps ? static_cast<double>(diag.accepted) / static_cast<double>(diag.steps) : 0.0;
  return diag;
}

FitResult weibull_saem_fit(const SurvivalDataset& data, const WeibullParams& init, const SaemConfig& config,
                           Rng& rng) {
  check_params(init, data);
  if (!init.to_vector().allFinite()) throw_input("initial parameters must be finite");
  if (data.n_events() == 0) throw_input("no events");
  WeibullQ q(data);
  McmcConfig mcmc = config.mcmc;
  mcmc.proposal_sd = mcmc.sd_for(data.n_frailty());

  FitResult res;
  res.algorithm = "weibull";
  res.param_names = init.names();
  res.trajectory.push_back(init.to_vector());
  FrailtyState b = FrailtyState::zeros(data.n_clusters(), data.n_frailty());

  WeibullParams theta = init;
  for (int k = 1; k <= config.stop.max_iter; ++k) {
    const McmcDiagnostics diag = weibull_sweep(b, theta, data, mcmc, rng);
    res.diagnostics.steps += diag.steps;
    res.diagnostics.accepted += diag.accepted;
    if (mcmc.adapt && k <= config.schedule.k0) mcmc = adapt_proposal(diag, mcmc);

    const double mu = config.schedule.mu(k);
    q.update(mu, b);
    if (!config.fix_gamma) {
      bool projected = false;
      const Matrix sigma = project_spd(q.frailty_statistic(), 1e-8, &projected);
      res.spd_projected = res.spd_projected || projected;
      theta.gamma = theta.gamma.kind() == FrailtyParam::Kind::ScalarVariance ? FrailtyParam::scalar(sigma(0, 0))
                                                                             : FrailtyParam::covariance(sigma);
    }
    unpack(newton_ascent(q, pack(theta), config.inner_tol, config.inner_max), theta);

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
  res.theta_hat = ModelParams{theta.beta, theta.gamma};
  res.baseline = WeibullBaseline{theta.lambda, theta.rho};
  res.estimate = theta.to_vector();
  res.final_frailty = b;
  res.proposal_sd = mcmc.proposal_sd;
  res.diagnostics.accept_rate = res.diagnostics.steps ? static_cast<double>(res.diagnostics.accepted) /
                                                            static_cast<double>(res.diagnostics.steps)
                                                      : 0.0;
  return res;
}

}  // namespace coxfrail
