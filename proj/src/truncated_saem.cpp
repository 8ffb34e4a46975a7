#include "coxfrail/truncated_saem.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/partial_likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coxfrail {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_beta_prior(const Vector& beta_latent, const Vector& beta0, double sigma_beta2) {
  const double nb = static_cast<double>(beta_latent.size());
  return -0.5 * nb * (kLog2Pi + std::log(sigma_beta2)) - 0.5 * (beta_latent - beta0).squaredNorm() / sigma_beta2;
}

SuffStats lerp(const SuffStats& s, const SuffStats& target, double mu) {
  return SuffStats{s.s_f + mu * (target.s_f - s.s_f), s.s_beta + mu * (target.s_beta - s.s_beta)};
}

SuffStats difference(const SuffStats& x, const SuffStats& y) {
  return SuffStats{x.s_f - y.s_f, x.s_beta - y.s_beta};
}

// Joint MH sweep over (b, beta_latent): cluster-at-a-time frailty updates
// at beta_latent followed by one random-walk block update of beta_latent.
struct ExtendedSampler {
  const SurvivalDataset& data;
  const RiskSetIndex& index;
  FrailtySampler frailty;

  ExtendedSampler(const SurvivalDataset& d, const RiskSetIndex& i) : data(d), index(i), frailty(d, i) {}

  void sweep(ExtendedLatent& xi, const ExtendedParams& eta, const McmcConfig& cfg, Vector& beta_sd,
             McmcDiagnostics& frailty_diag, McmcDiagnostics& beta_diag, Rng& rng) {
    McmcConfig one = cfg;
    one.n_inner = 1;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int s = 0; s < cfg.n_inner; ++s) {
      const McmcDiagnostics d = frailty.sweep(xi.b, xi.beta_latent, eta.gamma, one, rng);
      frailty_diag.steps += d.steps;
      frailty_diag.accepted += d.accepted;

      const Vector omega = frailty_offsets(data, xi.b);
      const double cur = frailty.last_log_partial() + log_beta_prior(xi.beta_latent, eta.beta0, eta.sigma_beta2);
      Vector cand = xi.beta_latent;
      for (Eigen::Index a = 0; a < cand.size(); ++a) cand(a) += beta_sd(a) * normal(rng);
      const double next = cox_partial(data, index, cand, omega, 0).value +
                          log_beta_prior(cand, eta.beta0, eta.sigma_beta2);
      ++beta_diag.steps;
      if (std::isfinite(next) && std::log(unif(rng)) < next - cur) {
        xi.beta_latent = cand;
        ++beta_diag.accepted;
      }
    }
    auto rate = [](McmcDiagnostics& d) {
      d.accept_rate = d.steps ? static_cast<double>(d.accepted) / static_cast<double>(d.steps) : 0.0;
    };
    rate(frailty_diag);
    rate(beta_diag);
  }
};

}  // namespace

double SuffStats::scaled_norm(std::size_t n_clusters) const {
  const double n = static_cast<double>(n_clusters);
  return std::sqrt((s_f / n).squaredNorm() + s_beta.squaredNorm());
}

SuffStats sufficient_statistics(const ExtendedLatent& xi) {
  return SuffStats{frailty_moment(xi.b), xi.beta_latent};
}

double extended_log_complete(const ExtendedParams& eta, const SurvivalDataset& data,
                             const RiskSetIndex& index, const ExtendedLatent& xi) {
  if (xi.beta_latent.size() != data.n_fixed() || eta.beta0.size() != data.n_fixed())
    throw_input("extended model: beta dimension does not match the dataset");
  if (!(eta.sigma_beta2 > 0.0)) throw_input("sigma_beta2 must be positive");
  const Vector omega = frailty_offsets(data, xi.b);
  return cox_partial(data, index, xi.beta_latent, omega, 0).value + log_frailty_prior(eta.gamma, xi.b) +
         log_beta_prior(xi.beta_latent, eta.beta0, eta.sigma_beta2);
}

double psi(const ExtendedParams& eta, std::size_t n_clusters) {
  Eigen::LLT<Matrix> llt(eta.gamma.sigma());
  if (llt.info() != Eigen::Success) throw_numerical("frailty covariance is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * static_cast<double>(n_clusters) * logdet + 0.5 * eta.beta0.squaredNorm() / eta.sigma_beta2;
}

double phi_dot(const ExtendedParams& eta, const SuffStats& s) {
  const Matrix precision = eta.gamma.sigma().inverse();
  return -0.5 * (precision.cwiseProduct(s.s_f)).sum() + s.s_beta.dot(eta.beta0) / eta.sigma_beta2;
}

ExtendedParams mstep_closed_form(const SuffStats& s, std::size_t n_clusters, double sigma_beta2,
                                 FrailtyParam::Kind kind, bool* projected) {
  if (n_clusters == 0) throw_input("mstep_closed_form: no clusters");
  ExtendedParams out;
  out.beta0 = s.s_beta;
  out.sigma_beta2 = sigma_beta2;
  const Matrix sigma = project_spd(s.s_f / static_cast<double>(n_clusters), 1e-8, projected);
  out.gamma = kind == FrailtyParam::Kind::ScalarVariance ? FrailtyParam::scalar(sigma(0, 0))
                                                         : FrailtyParam::covariance(sigma);
  return out;
}

A4Check check_a4(const StepSchedule& mu, const EpsSchedule& eps, double a, double p, long n_terms) {
  if (n_terms < 1000) throw_input("check_a4 needs at least 1000 terms");
  A4Check out;
  auto term = [&](long k) {
    const double m = mu.mu(k);
    const double e = eps(k);
    return m * m + m * std::pow(e, a) + std::pow(m / e, p);
  };
  out.mu_harmonic_bound = std::numeric_limits<double>::infinity();
  for (long k = 1; k <= n_terms; ++k) {
    const double m = mu.mu(k);
    out.mu_partial_sum += m;
    out.series_partial_sum += term(k);
    if (k > n_terms / 2) out.mu_harmonic_bound = std::min(out.mu_harmonic_bound, static_cast<double>(k) * m);
  }
  const long k1 = n_terms / 10;
  out.series_tail_slope = std::log(term(n_terms) / term(k1)) / std::log(static_cast<double>(n_terms) / static_cast<double>(k1));
  if (out.series_tail_slope < -1.0)
    out.tail_bound = term(n_terms) * static_cast<double>(n_terms) / (-out.series_tail_slope - 1.0);
  // A slope within rounding of -1 (harmonic-like tails) is not accepted.
  out.ok = out.mu_harmonic_bound > 0.0 && out.series_tail_slope < -1.05 && std::isfinite(out.series_partial_sum) &&
           std::isfinite(out.tail_bound);
  return out;
}

ExtendedParams default_extended_init(const SurvivalDataset& data, FrailtyParam::Kind kind, double sigma_beta2) {
  const ModelParams p = default_init(data, kind);
  return ExtendedParams{p.beta, p.gamma, sigma_beta2};
}

FitResult truncated_fit(const SurvivalDataset& data, const ExtendedParams& init, const TruncatedConfig& config,
                        Rng& rng) {
  if (init.beta0.size() != data.n_fixed() || init.gamma.dim() != data.n_frailty())
    throw_input("initial parameters do not match the dataset dimensions");
  if (!(config.sigma_beta2 > 0.0)) throw_input("sigma_beta2 must be positive");
  if (!(config.beta_proposal_sd > 0.0)) throw_input("beta proposal sd must be positive");
  const SaemConfig& sc = config.saem;
  if (!check_a4(sc.schedule, config.eps, config.a, config.p).ok)
    throw_input("step-size and truncation schedules violate the summability conditions");

  const RiskSetIndex index = build_risk_index(data);
  ExtendedSampler sampler(data, index);
  const std::size_t n = data.n_clusters();
  const Eigen::Index f = data.n_frailty();
  const Eigen::Index nb = data.n_fixed();
  const FrailtyParam::Kind kind = init.gamma.kind();

  McmcConfig mcmc = sc.mcmc;
  mcmc.proposal_sd = mcmc.sd_for(f);
  Vector beta_sd = Vector::Constant(nb, config.beta_proposal_sd);

  ExtendedParams eta = init;
  eta.sigma_beta2 = config.sigma_beta2;
  ExtendedLatent xi{FrailtyState::zeros(n, f), init.beta0};
  SuffStats s{static_cast<double>(n) * init.gamma.sigma(), init.beta0};
  SuffStats anchor = s;
  TruncationState trunc;

  FitResult res;
  res.algorithm = "algorithm2";
  const ModelParams start{init.beta0, init.gamma};
  res.param_names = start.names();
  res.trajectory.push_back(start.to_vector());

  std::normal_distribution<double> normal(0.0, 1.0);
  auto clamp = [&](double v) { return std::clamp(v, -config.restart_clamp, config.restart_clamp); };

  for (int k = 1; k <= sc.stop.max_iter; ++k) {
    McmcDiagnostics fd;
    McmcDiagnostics bd;
    sampler.sweep(xi, eta, mcmc, beta_sd, fd, bd, rng);
    res.diagnostics.steps += fd.steps;
    res.diagnostics.accepted += fd.accepted;
    if (k <= sc.schedule.k0 && mcmc.adapt) {
      mcmc = adapt_proposal(fd, mcmc);
      if (bd.steps) beta_sd *= std::exp(mcmc.adapt_gain * (bd.accept_rate - mcmc.target_accept));
    }

    const double mu = sc.schedule.mu(k);
    const SuffStats candidate = lerp(s, sufficient_statistics(xi), mu);
    const double jump = difference(candidate, s).scaled_norm(n);
    const double eps_k = config.eps(k);
    bool restart = false;
    if (k > sc.schedule.k0) {
      if (trunc.r0 == 0.0) trunc.r0 = config.radius_scale * (1.0 + anchor.scaled_norm(n));
      restart = candidate.scaled_norm(n) > trunc.radius() || jump > eps_k;
    }
    if (restart) {
      ++trunc.kappa;
      ++trunc.restarts;
      if (trunc.restarts > config.max_restarts) throw_numerical("truncation not stabilizing");
      s = anchor;
      for (Eigen::Index i = 0; i < xi.b.b.rows(); ++i)
        for (Eigen::Index a = 0; a < f; ++a) xi.b.b(i, a) = clamp(normal(rng));
      for (Eigen::Index a = 0; a < nb; ++a) xi.beta_latent(a) = clamp(init.beta0(a) + normal(rng));
    } else {
      s = candidate;
    }
    if (k == sc.schedule.k0) anchor = s;

    bool projected = false;
    eta = mstep_closed_form(s, n, config.sigma_beta2, kind, &projected);
    res.spd_projected = res.spd_projected || projected;

    const Vector v = ModelParams{eta.beta0, eta.gamma}.to_vector();
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > sc.divergence_bound) throw Error(ErrorKind::Diverged, "diverged");
    res.trajectory.push_back(v);
    TraceRow row;
    row.iteration = k;
    row.theta = v;
    row.accept_rate = fd.accept_rate;
    row.mu = mu;
    row.has_truncation = true;
    row.kappa = trunc.kappa;
    row.restart = restart;
    row.jump = jump;
    row.eps = eps_k;
    res.trace.push_back(std::move(row));
    res.iterations = k;
    if (k > sc.schedule.k0 && !restart && check_stop(res.trajectory, sc.stop.eps, sc.stop.window)) {
      res.converged = true;
      break;
    }
  }
  res.theta_hat = ModelParams{eta.beta0, eta.gamma};
  res.estimate = res.theta_hat.to_vector();
  res.final_frailty = xi.b;
  res.proposal_sd = mcmc.proposal_sd;
  res.restarts = trunc.restarts;
  res.diagnostics.accept_rate = res.diagnostics.steps ? static_cast<double>(res.diagnostics.accepted) /
                                                            static_cast<double>(res.diagnostics.steps)
                                                      : 0.0;
  return res;
}

}  // namespace coxfrail
