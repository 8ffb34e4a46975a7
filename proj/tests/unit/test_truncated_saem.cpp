#include "builders.hpp"
#include "oracles.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/partial_likelihood.hpp"
#include "coxfrail/simulator.hpp"
#include "coxfrail/truncated_saem.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace coxfrail;
using testing_support::vec;

namespace {

SurvivalDataset small_data(std::uint64_t seed, Eigen::Index f = 1) {
  Rng rng = make_rng(seed);
  oracle::RandomDataSpec spec;
  spec.n_clusters = 4;
  spec.n_frailty = f;
  return oracle::random_dataset(spec, rng);
}

ExtendedParams random_eta(Eigen::Index f, double sigma_beta2) {
  Matrix a = Matrix::Random(f, f) * 0.5;
  const auto g = f == 1 ? FrailtyParam::scalar(0.2 + std::abs(a(0, 0)) * 2)
                        : FrailtyParam::covariance(a * a.transpose() + 0.3 * Matrix::Identity(f, f));
  return ExtendedParams{Vector::Random(2) * 2.0, g, sigma_beta2};
}

}  // namespace

TEST_CASE("extended log likelihood by terms") {
  for (Eigen::Index f = 1; f <= 2; ++f) {
    const auto d = small_data(1 + static_cast<std::uint64_t>(f), f);
    const auto idx = build_risk_index(d);
    const ExtendedParams eta = random_eta(f, 10.0);
    const ExtendedLatent xi{FrailtyState{Matrix::Random(4, f)}, vec({0.4, -1.1})};
    const long double prior_beta = -0.5L * 2.0L * std::log(2.0L * std::numbers::pi_v<long double> * 10.0L) -
                                   0.5L * static_cast<long double>((xi.beta_latent - eta.beta0).squaredNorm()) / 10.0L;
    const long double expected = oracle::naive_log_partial(d, xi.beta_latent, xi.b.b) +
                                 oracle::naive_log_prior(eta.gamma.sigma(), xi.b.b) + prior_beta;
    CHECK(extended_log_complete(eta, d, idx, xi) == doctest::Approx(static_cast<double>(expected)).epsilon(1e-12));

    // Decomposition into the frailty model plus the Gaussian beta term.
    ExtendedLatent at_mean{xi.b, eta.beta0};
    const double lc = log_complete_partial({eta.beta0, eta.gamma}, d, idx, xi.b).total;
    CHECK(extended_log_complete(eta, d, idx, at_mean) ==
          doctest::Approx(lc - std::log(2.0 * std::numbers::pi * 10.0)).epsilon(1e-12));
  }
}

TEST_CASE("exponential-family form") {
  for (Eigen::Index f = 1; f <= 2; ++f) {
    const auto d = small_data(5 + static_cast<std::uint64_t>(f), f);
    const auto idx = build_risk_index(d);
    const ExtendedLatent xi{FrailtyState{Matrix::Random(4, f)}, vec({0.4, -1.1})};
    const SuffStats s = sufficient_statistics(xi);
    CHECK(s.s_f.isApprox(xi.b.b.transpose() * xi.b.b));
    CHECK(s.s_beta == xi.beta_latent);
    double reference = 0.0;
    for (int t = 0; t < 20; ++t) {
      const ExtendedParams eta = random_eta(f, 10.0);
      const double rest = extended_log_complete(eta, d, idx, xi) - (-psi(eta, 4) + phi_dot(eta, s));
      if (t == 0) reference = rest;
      CHECK(std::abs(rest - reference) < 1e-10);
    }
  }
}

TEST_CASE("closed-form M-step") {
  SuffStats s{Matrix::Constant(1, 1, 50 * 0.7), vec({2, 3})};
  auto eta = mstep_closed_form(s, 50, 10.0, FrailtyParam::Kind::ScalarVariance);
  CHECK(eta.beta0 == vec({2, 3}));
  CHECK(eta.gamma.variance() == doctest::Approx(0.7));
  CHECK(eta.sigma_beta2 == 10.0);

  Matrix sigma(2, 2);
  sigma << 0.8, 0.226, 0.226, 0.4;
  bool projected = true;
  eta = mstep_closed_form({39 * sigma, vec({2, 3})}, 39, 10.0, FrailtyParam::Kind::Covariance, &projected);
  CHECK(eta.gamma.sigma().isApprox(sigma));
  CHECK_FALSE(projected);

  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  eta = mstep_closed_form({bad, vec({0, 0})}, 1, 10.0, FrailtyParam::Kind::Covariance, &projected);
  CHECK(projected);
}

TEST_CASE("M-step is stationary") {
  for (Eigen::Index f = 1; f <= 2; ++f) {
    const std::size_t n = 6;
    const Matrix b = Matrix::Random(static_cast<Eigen::Index>(n), f);
    const SuffStats s{b.transpose() * b, vec({1.5, -0.5})};
    const auto kind = f == 1 ? FrailtyParam::Kind::ScalarVariance : FrailtyParam::Kind::Covariance;
    const ExtendedParams best = mstep_closed_form(s, n, 10.0, kind);
    auto objective = [&](const Vector& v) {
      const auto mp = ModelParams::from_vector(v, 2, kind, f);
      return -psi({mp.beta, mp.gamma, 10.0}, n) + phi_dot({mp.beta, mp.gamma, 10.0}, s);
    };
    const Vector g = oracle::central_gradient(objective, ModelParams{best.beta0, best.gamma}.to_vector(), 1e-6);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("summability check") {
  const A4Check plain = check_a4(StepSchedule{0}, EpsSchedule{0.4}, 1.0, 2.0);
  CHECK(plain.ok);
  CHECK(plain.mu_harmonic_bound == doctest::Approx(1.0));
  CHECK(plain.series_tail_slope < -1.0);
  const A4Check shifted = check_a4(StepSchedule{100}, EpsSchedule{0.4}, 1.0, 2.0);
  CHECK(shifted.ok);
  CHECK(shifted.mu_harmonic_bound > 0.9);
  // (mu / eps)^2 ~ k^-0.8 is not summable.
  CHECK_FALSE(check_a4(StepSchedule{0}, EpsSchedule{0.6}, 1.0, 2.0).ok);
  // mu eps ~ k^-1 sits on the boundary.
  CHECK_FALSE(check_a4(StepSchedule{0}, EpsSchedule{0.0}, 1.0, 2.0).ok);
}

TEST_CASE("truncated fit bookkeeping") {
  SimDesign design;
  design.n_clusters = 50;
  design.beta = vec({2.0, 3.0});
  design.seed = 3;
  const auto d = simulate(design).data;
  TruncatedConfig cfg;
  cfg.saem.stop.max_iter = 600;
  Rng rng = make_rng(4);
  const auto res = truncated_fit(d, default_extended_init(d, FrailtyParam::Kind::ScalarVariance), cfg, rng);
  CHECK(res.algorithm == "algorithm2");
  CHECK(res.trajectory.size() == static_cast<std::size_t>(res.iterations) + 1);
  int restarts = 0;
  int kappa = 0;
  double eps = INFINITY;
  for (const auto& row : res.trace) {
    CHECK(row.has_truncation);
    CHECK(row.kappa >= kappa);
    CHECK(row.kappa == kappa + (row.restart ? 1 : 0));
    if (row.iteration <= cfg.saem.schedule.k0) CHECK_FALSE(row.restart);
    if (!row.restart && row.iteration > cfg.saem.schedule.k0) CHECK(row.jump <= row.eps);
    CHECK(row.eps <= eps);
    CHECK(row.eps == doctest::Approx(std::pow(row.iteration, -0.4)));
    eps = row.eps;
    kappa = row.kappa;
    restarts += row.restart ? 1 : 0;
  }
  CHECK(res.restarts == restarts);
  CHECK(res.estimate.allFinite());
  CHECK((res.estimate.head(2) - vec({2.0, 3.0})).cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("unstable truncation is reported") {
  SimDesign design;
  design.n_clusters = 20;
  design.beta = vec({2.0, 3.0});
  const auto d = simulate(design).data;
  TruncatedConfig cfg;
  cfg.saem.schedule.k0 = 5;
  cfg.eps.exponent = 0.4;
  cfg.radius_scale = 1e-20;  // 2^50 doublings still leave the radius far below |s|
  Rng rng = make_rng(5);
  CHECK_THROWS_WITH(truncated_fit(d, default_extended_init(d, FrailtyParam::Kind::ScalarVariance), cfg, rng),
                    "truncation not stabilizing");
}

TEST_CASE("schedules violating the conditions are refused") {
  SimDesign design;
  design.n_clusters = 10;
  design.beta = vec({2.0, 3.0});
  const auto d = simulate(design).data;
  TruncatedConfig cfg;
  cfg.eps.exponent = 0.8;
  Rng rng = make_rng(5);
  CHECK_THROWS_AS(truncated_fit(d, default_extended_init(d, FrailtyParam::Kind::ScalarVariance), cfg, rng), Error);
}
