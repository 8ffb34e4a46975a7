#include "builders.hpp"
#include "oracles.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/simulator.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace coxfrail;
using testing_support::vec;

namespace {

std::vector<double> times_of(const SurvivalDataset& d) { return d.times(); }

double censored_fraction(const SurvivalDataset& d) {
  return 1.0 - static_cast<double>(d.n_events()) / static_cast<double>(d.n_individuals());
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// 1% critical value of the one-sample KS statistic.
double ks_critical(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

}  // namespace

TEST_CASE("no censoring target means every status is an event") {
  SimDesign d;
  d.beta = vec({2, 3});
  const auto sim = simulate(d);
  CHECK(sim.data.n_events() == sim.data.n_individuals());
  CHECK(sim.censoring_bound == 0.0);
  CHECK(sim.data.n_individuals() == 200);
}

TEST_CASE("unit Weibull with zero predictor is unit exponential") {
  SimDesign d;
  d.n_clusters = 100000;
  d.cluster_sizes = {1};
  d.baseline = WeibullHazard{1.0, 1.0};
  d.beta = Vector::Zero(1);
  d.frailty = GaussianFrailty{1e-300};
  d.seed = 12;
  const auto sim = simulate(d);
  const double ks = oracle::ks_distance(times_of(sim.data), [](double t) { return 1.0 - std::exp(-t); });
  CHECK(ks < ks_critical(100000));
}

TEST_CASE("inverse transform reproduces the cumulative hazard") {
  const std::vector<Baseline> baselines = {WeibullHazard{0.01, 1.5}, WeibullHazard{2.0, 0.7},
                                           GompertzHazard{0.08, 2.0}, GompertzHazard{1.0, 0.3}};
  for (const auto& base : baselines) {
    for (double e : {1e-6, 0.1, 1.0, 5.0, 30.0})
      for (double eta : {-2.0, 0.0, 1.5})
        CHECK(cumulative_hazard(base, event_time(base, e, eta)) * std::exp(eta) == doctest::Approx(e).epsilon(1e-10));

    SimDesign d;
    d.n_clusters = 100000;
    d.cluster_sizes = {1};
    d.baseline = base;
    d.beta = Vector::Zero(1);
    d.frailty = GaussianFrailty{1e-300};
    d.seed = 13;
    const auto sim = simulate(d);
    const double ks = oracle::ks_distance(
        times_of(sim.data), [&](double t) { return 1.0 - std::exp(-cumulative_hazard(base, t)); });
    CHECK(ks < ks_critical(100000));
  }
}

TEST_CASE("study design shape and event-time distribution") {
  SimDesign d;
  d.n_clusters = 25000;
  d.beta = vec({2, 3});
  d.frailty = GaussianFrailty{0.7};
  d.seed = 21;
  const auto sample = simulate(d);
  CHECK(sample.data.n_clusters() == 25000);
  CHECK(sample.data.n_individuals() == 100000);
  CHECK(sample.data.n_fixed() == 2);
  d.n_clusters = 250000;
  d.seed = 22;
  const auto reference = simulate(d);
  const double n = 1e5, m = 1e6;
  CHECK(ks_two_sample(times_of(sample.data), times_of(reference.data)) < 1.628 * std::sqrt((n + m) / (n * m)));
}

TEST_CASE("censoring calibration") {
  for (double target : {0.2, 0.4, 0.51}) {
    SimDesign d;
    d.n_clusters = 5000;
    d.beta = vec({2, 3});
    d.censor_target = target;
    d.seed = 31;
    const auto sim = simulate(d);
    CHECK(sim.censoring_bound > 0.0);
    CHECK(std::abs(censored_fraction(sim.data) - target) < 0.02);
  }
}

TEST_CASE("censoring uses its own stream") {
  SimDesign d;
  d.n_clusters = 300;
  d.beta = vec({2, 3});
  d.seed = 41;
  const auto plain = simulate(d);
  d.censor_target = 0.4;
  const auto censored = simulate(d);
  for (std::size_t j = 0; j < plain.data.n_individuals(); ++j) {
    CHECK(plain.data.z().row(static_cast<Eigen::Index>(j)) == censored.data.z().row(static_cast<Eigen::Index>(j)));
    if (censored.data.status(j) == 1) CHECK(censored.data.time(j) == plain.data.time(j));
    else CHECK(censored.data.time(j) < plain.data.time(j));
  }
  CHECK(plain.true_frailty.b == censored.true_frailty.b);
}

TEST_CASE("seeded reproducibility") {
  SimDesign d;
  d.beta = vec({2, 3});
  d.seed = 5;
  const auto a = simulate(d), b = simulate(d);
  CHECK(a.data.times() == b.data.times());
  d.seed = 6;
  CHECK(simulate(d).data.times() != a.data.times());
}

TEST_CASE("frailty laws") {
  SimDesign d;
  d.n_clusters = 20000;
  d.cluster_sizes = {1};
  d.beta = vec({2, 3});
  d.frailty = GaussianFrailty{0.7};
  const auto g = simulate(d);
  const double var = g.true_frailty.b.squaredNorm() / 20000.0;
  CHECK(std::abs(var - 0.7) < 0.03);

  Matrix sigma(2, 2);
  sigma << 0.8, 0.226, 0.226, 0.4;
  d.frailty = GaussianCovFrailty{sigma};
  const auto c = simulate(d);
  CHECK(c.data.n_frailty() == 2);
  const Matrix cov = c.true_frailty.b.transpose() * c.true_frailty.b / 20000.0;
  CHECK((cov - sigma).cwiseAbs().maxCoeff() < 0.03);
  for (std::size_t j = 0; j < 20; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    CHECK(c.data.w()(jj, 0) == 1.0);
    CHECK(c.data.w()(jj, 1) == c.data.z().row(jj).sum());
  }

  d.frailty = MixtureFrailty{};
  const auto m = simulate(d);
  const Vector b = m.true_frailty.b.col(0);
  double pos = 0, neg = 0;
  int np = 0, nn = 0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (b(i) > 0) { pos += b(i); ++np; }
    else { neg += b(i); ++nn; }
  }
  CHECK(std::abs(pos / np - 10.0) < 0.1);
  CHECK(std::abs(neg / nn + 10.0) < 0.1);
  CHECK(std::abs(static_cast<double>(np) / 20000.0 - 0.5) < 0.02);
}

TEST_CASE("log-uniform group sizes") {
  Rng rng = make_rng(1);
  const auto sizes = log_uniform_sizes(2000, 20.0, 250.0, rng);
  CHECK(*std::min_element(sizes.begin(), sizes.end()) >= 20);
  CHECK(*std::max_element(sizes.begin(), sizes.end()) <= 250);
  std::size_t below = 0;
  const double mid = std::sqrt(20.0 * 250.0);
  for (auto s : sizes) below += static_cast<double>(s) < mid ? 1 : 0;
  CHECK(std::abs(static_cast<double>(below) / 2000.0 - 0.5) < 0.05);
}

TEST_CASE("bladder-cancer-shaped analog") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto sim = eortc_analog(seed);
    CHECK(sim.data.n_clusters() == 39);
    for (std::size_t i = 0; i < 39; ++i) {
      CHECK(sim.data.cluster_size(i) >= 20);
      CHECK(sim.data.cluster_size(i) <= 250);
    }
    const double cens = censored_fraction(sim.data);
    CHECK(cens >= 0.46);
    CHECK(cens <= 0.56);
    const double treated = sim.data.z().col(0).mean();
    CHECK(treated >= 0.75);
    CHECK(treated <= 0.85);
    CHECK(sim.data.n_frailty() == 2);
  }
}

TEST_CASE("design validation") {
  SimDesign d;
  d.beta = vec({2, 3});
  d.censor_target = 1.0;
  CHECK_THROWS_AS(simulate(d), Error);
  d.censor_target = 0.0;
  d.baseline = WeibullHazard{-1.0, 1.5};
  CHECK_THROWS_AS(simulate(d), Error);
  d.baseline = GompertzHazard{0.08, 0.0};
  CHECK_THROWS_AS(simulate(d), Error);
  d.baseline = WeibullHazard{};
  d.cluster_sizes = {4, 4};
  CHECK_THROWS_AS(simulate(d), Error);
  d.cluster_sizes = {4};
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  d.frailty = GaussianCovFrailty{bad};
  CHECK_THROWS_AS(simulate(d), Error);
}
