#include "coxfrail/simulator.hpp"

#include "coxfrail/error.hpp"

#include <cmath>

namespace coxfrail {

namespace {

enum Stream : std::uint64_t { kCovariates = 1, kFrailty = 2, kEvents = 3, kCensoring = 4, kPilot = 5, kSizes = 6 };

Eigen::Index frailty_dim(const FrailtyLaw& law) {
  if (const auto* cov = std::get_if<GaussianCovFrailty>(&law)) return cov->sigma.rows();
  return 1;
}

void validate(const SimDesign& d) {
  if (d.n_clusters < 1) throw_input("design needs at least one cluster");
  if (d.cluster_sizes.empty() || (d.cluster_sizes.size() != 1 && d.cluster_sizes.size() != d.n_clusters))
    throw_input("cluster_sizes must hold one size or one per cluster");
  for (auto s : d.cluster_sizes)
    if (s < 1) throw_input("cluster sizes must be positive");
  if (const auto* w = std::get_if<WeibullHazard>(&d.baseline)) {
    if (!(w->lambda > 0.0) || !(w->rho > 0.0)) throw_input("Weibull lambda and rho must be positive");
  } else {
    const auto& g = std::get<GompertzHazard>(d.baseline);
    if (!(g.lambda > 0.0) || !(g.alpha > 0.0)) throw_input("Gompertz lambda and alpha must be positive");
  }
  if (!(d.censor_target >= 0.0 && d.censor_target < 1.0)) throw_input("censor_target must lie in [0, 1)");
  if (!(d.covariate_p >= 0.0 && d.covariate_p <= 1.0)) throw_input("covariate probability must lie in [0, 1]");
  if (const auto* cov = std::get_if<GaussianCovFrailty>(&d.frailty)) {
    if (cov->sigma.rows() != 2 || cov->sigma.cols() != 2)
      throw_input("correlated frailty design expects a 2x2 covariance");
    FrailtyParam::covariance(cov->sigma);  // validates SPD
  } else if (const auto* g = std::get_if<GaussianFrailty>(&d.frailty)) {
    if (!(g->variance > 0.0)) throw_input("frailty variance must be positive");
  }
}

Vector draw_frailty(const FrailtyLaw& law, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  if (const auto* g = std::get_if<GaussianFrailty>(&law)) {
    return Vector::Constant(1, std::sqrt(g->variance) * normal(rng));
  }
  if (const auto* cov = std::get_if<GaussianCovFrailty>(&law)) {
    const Matrix l = cov->sigma.llt().matrixL();
    Vector e(cov->sigma.rows());
    for (Eigen::Index a = 0; a < e.size(); ++a) e(a) = normal(rng);
    return l * e;
  }
  const auto& mix = std::get<MixtureFrailty>(law);
  std::bernoulli_distribution coin(0.5);
  const double centre = coin(rng) ? mix.separation : -mix.separation;
  return Vector::Constant(1, centre + std::sqrt(mix.variance) * normal(rng));
}

Vector draw_covariates(Eigen::Index b, double p, Rng& rng) {
  std::bernoulli_distribution bern(p);
  Vector z(b);
  for (Eigen::Index a = 0; a < b; ++a) z(a) = bern(rng) ? 1.0 : 0.0;
  return z;
}

Vector frailty_design_row(const FrailtyLaw& law, const Vector& z) {
  if (std::holds_alternative<GaussianCovFrailty>(law)) {
    Vector w(2);
    w << 1.0, z.sum();
    return w;
  }
  return Vector::Ones(1);
}

double unit_exponential(Rng& rng) {
  std::exponential_distribution<double> ex(1.0);
  return ex(rng);
}

// Solves E[min(T, c)] / c = target over the pilot event times.
double calibrate_censoring(const std::vector<double>& pilot, double target) {
  auto fraction = [&](double c) {
    double s = 0.0;
    for (double t : pilot) s += std::min(t, c);
    return s / (c * static_cast<double>(pilot.size()));
  };
  double lo = std::log(1e-12);
  double hi = std::log(1e12);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (fraction(std::exp(mid)) > target) {
      lo = mid;  // too much censoring: enlarge c
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-12) return std::exp(0.5 * (lo + hi));
  }
  throw_numerical("censoring calibration did not converge");
}

}  // namespace

double cumulative_hazard(const Baseline& baseline, double t) {
  if (const auto* w = std::get_if<WeibullHazard>(&baseline)) return w->lambda * std::pow(t, w->rho);
  const auto& g = std::get<GompertzHazard>(baseline);
  return g.lambda / g.alpha * std::expm1(g.alpha * t);
}

double event_time(const Baseline& baseline, double e, double eta) {
  double t = 0.0;
  if (const auto* w = std::get_if<WeibullHazard>(&baseline)) {
    t = std::exp((std::log(e) - std::log(w->lambda) - eta) / w->rho);
  } else {
    const auto& g = std::get<GompertzHazard>(baseline);
    t = std::log1p(g.alpha * e * std::exp(-eta) / g.lambda) / g.alpha;
  }
  if (!(t > 0.0) || !std::isfinite(t)) throw_numerical("simulated event time is not a positive finite number");
  return t;
}

std::vector<std::size_t> log_uniform_sizes(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  std::vector<std::size_t> out(n);
  for (auto& s : out) s = static_cast<std::size_t>(std::lround(std::exp(u(rng))));
  return out;
}

SimulatedData simulate(const SimDesign& design) {
  validate(design);
  const Eigen::Index nb = design.beta.size();
  const Eigen::Index f = frailty_dim(design.frailty);
  Rng rng_cov = make_rng(design.seed, kCovariates);
  Rng rng_frail = make_rng(design.seed, kFrailty);
  Rng rng_evt = make_rng(design.seed, kEvents);
  Rng rng_cens = make_rng(design.seed, kCensoring);

  double bound = 0.0;
  if (design.censor_target > 0.0) {
    Rng rng_pilot = make_rng(design.seed, kPilot);
    std::vector<double> pilot(100000);
    for (auto& t : pilot) {
      const Vector z = draw_covariates(nb, design.covariate_p, rng_pilot);
      const Vector b = draw_frailty(design.frailty, rng_pilot);
      const double eta = z.dot(design.beta) + frailty_design_row(design.frailty, z).dot(b);
      t = event_time(design.baseline, unit_exponential(rng_pilot), eta);
    }
    bound = calibrate_censoring(pilot, design.censor_target);
  }
  std::uniform_real_distribution<double> cens(0.0, bound);

  std::vector<Cluster> clusters(design.n_clusters);
  FrailtyState truth = FrailtyState::zeros(design.n_clusters, f);
  for (std::size_t i = 0; i < design.n_clusters; ++i) {
    const std::size_t size = design.cluster_sizes.size() == 1 ? design.cluster_sizes[0] : design.cluster_sizes[i];
    const Vector b = draw_frailty(design.frailty, rng_frail);
    truth.b.row(static_cast<Eigen::Index>(i)) = b.transpose();
    Cluster& c = clusters[i];
    c.id = std::to_string(i + 1);
    c.individuals.resize(size);
    for (auto& ind : c.individuals) {
      ind.z = draw_covariates(nb, design.covariate_p, rng_cov);
      ind.w = frailty_design_row(design.frailty, ind.z);
      const double eta = ind.z.dot(design.beta) + ind.w.dot(b);
      const double t = event_time(design.baseline, unit_exponential(rng_evt), eta);
      if (bound > 0.0) {
        const double cdraw = cens(rng_cens);
        ind.time = std::min(t, cdraw);
        ind.status = t <= cdraw ? 1 : 0;
      } else {
        ind.time = t;
        ind.status = 1;
      }
    }
  }
  return SimulatedData{SurvivalDataset(std::move(clusters)), std::move(truth), bound};
}

SimulatedData eortc_analog(std::uint64_t seed) {
  Rng rng_sizes = make_rng(seed, kSizes);
  SimDesign d;
  d.n_clusters = 39;
  d.cluster_sizes = log_uniform_sizes(39, 20.0, 250.0, rng_sizes);
  d.baseline = WeibullHazard{0.05, 1.2};
  d.beta = Vector::Constant(1, -0.2);
  Matrix sigma(2, 2);
  sigma << 0.07, 0.043, 0.043, 0.045;
  d.frailty = GaussianCovFrailty{sigma};
  d.covariate_p = 0.8;
  d.censor_target = 0.51;
  d.seed = seed;
  return simulate(d);
}

}  // namespace coxfrail
