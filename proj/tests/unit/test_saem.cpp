#include "builders.hpp"
#include "oracles.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/partial_likelihood.hpp"
#include "coxfrail/saem.hpp"
#include "coxfrail/simulator.hpp"

#include <doctest.h>

#include <cmath>

using namespace coxfrail;
using testing_support::make_dataset;
using testing_support::vec;

namespace {

SurvivalDataset small_data(std::uint64_t seed, std::size_t n_clusters, std::size_t max_size = 4) {
  Rng rng = make_rng(seed);
  oracle::RandomDataSpec spec;
  spec.n_clusters = n_clusters;
  spec.max_size = max_size;
  return oracle::random_dataset(spec, rng);
}

double naive_complete(const SurvivalDataset& d, const ModelParams& p, const Matrix& b) {
  return static_cast<double>(oracle::naive_log_partial(d, p.beta, b) + oracle::naive_log_prior(p.gamma.sigma(), b));
}

}  // namespace

TEST_CASE("step schedule") {
  StepSchedule s;
  CHECK(s.mu(1) == 1.0);
  CHECK(s.mu(100) == 1.0);
  CHECK(s.mu(101) == 1.0);
  CHECK(s.mu(102) == 0.5);
  CHECK(s.mu(110) == doctest::Approx(0.1));
  CHECK_THROWS_AS(s.mu(0), Error);
}

TEST_CASE("stopping rule") {
  const Vector a = vec({1.0, 2.0});
  CHECK(check_stop({a, a, a, a}));
  const Vector step = a * (1 + 1e-3);
  CHECK_FALSE(check_stop({a, a, a, step}, 1e-4, 3));
  // Two passes then one failure, or a failure followed by two passes.
  CHECK_FALSE(check_stop({a, a, a, step, step, step * (1 + 1e-3)}, 1e-4, 3));
  CHECK_FALSE(check_stop({a, step, step, step}, 1e-4, 3));
  CHECK(check_stop({a, step, step, step, step}, 1e-4, 3));
  CHECK_FALSE(check_stop({a, a, a}, 1e-4, 3));
  const Vector zero = Vector::Zero(2);
  CHECK_FALSE(check_stop({zero, zero, zero, zero}));
}

TEST_CASE("history weights telescope to one") {
  const auto d = small_data(1, 3);
  const auto idx = build_risk_index(d);
  QAccumulator acc(d, idx, 100000);
  StepSchedule s{5};
  Rng rng = make_rng(2);
  std::vector<double> mus;
  for (long k = 1; k <= 60; ++k) {
    mus.push_back(s.mu(k));
    acc.update(s.mu(k), FrailtyState{Matrix::Random(3, 1)});
    double sum = 0.0;
    for (double w : acc.weights()) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(acc.total_weight() == doctest::Approx(1.0).epsilon(1e-14));
  }
  // Explicit products mu_i prod_{j > i} (1 - mu_j) for the surviving entries.
  const auto w = acc.weights();
  const std::size_t n = mus.size();
  for (std::size_t back = 0; back < w.size(); ++back) {
    const std::size_t i = n - 1 - back;
    double expect = mus[i];
    for (std::size_t j = i + 1; j < n; ++j) expect *= 1.0 - mus[j];
    CHECK(w[w.size() - 1 - back] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("Q recursion equals the weighted history") {
  for (Eigen::Index f = 1; f <= 2; ++f) {
    Rng rng = make_rng(3 + static_cast<std::uint64_t>(f));
    oracle::RandomDataSpec spec;
    spec.n_clusters = 4;
    spec.n_frailty = f;
    const auto d = oracle::random_dataset(spec, rng);
    const auto idx = build_risk_index(d);
    QAccumulator acc(d, idx, 100000);
    StepSchedule s{3};
    std::vector<Matrix> draws;
    std::vector<double> q_rec;  // recursion carried at a fixed set of theta
    std::vector<ModelParams> thetas;
    for (int t = 0; t < 5; ++t) {
      Matrix a = Matrix::Random(f, f) * 0.4;
      const auto g = f == 1 ? FrailtyParam::scalar(0.5 + 0.2 * t)
                            : FrailtyParam::covariance(a * a.transpose() + 0.5 * Matrix::Identity(f, f));
      thetas.push_back({Vector::Random(2), g});
      q_rec.push_back(0.0);
    }
    for (long k = 1; k <= 25; ++k) {
      FrailtyState b{Matrix::Random(4, f)};
      const double mu = s.mu(k);
      acc.update(mu, b);
      for (std::size_t t = 0; t < thetas.size(); ++t)
        q_rec[t] += mu * (naive_complete(d, thetas[t], b.b) - q_rec[t]);
    }
    for (std::size_t t = 0; t < thetas.size(); ++t)
      CHECK(acc.value(thetas[t]) == doctest::Approx(q_rec[t]).epsilon(1e-10));
  }
}

TEST_CASE("history cap keeps the most recent snapshots") {
  const auto d = small_data(5, 3);
  const auto idx = build_risk_index(d);
  QAccumulator acc(d, idx, 10);
  StepSchedule s{2};
  for (long k = 1; k <= 40; ++k) acc.update(s.mu(k), FrailtyState{Matrix::Random(3, 1)});
  CHECK(acc.size() == 10);
  double sum = 0.0;
  for (double w : acc.weights()) sum += w;
  CHECK(sum == doctest::Approx(acc.total_weight()));
}

TEST_CASE("M-step closed-form gamma") {
  const auto d = small_data(6, 4);
  const auto idx = build_risk_index(d);
  FrailtyState b{Matrix(4, 1)};
  b.b << 0.5, -1.0, 0.3, 0.8;
  QAccumulator one(d, idx);
  one.update(1.0, b);
  const ModelParams cur{vec({0.1, 0.1}), FrailtyParam::scalar(1.0)};
  CHECK(maximization_step(one, cur).params.gamma.variance() == doctest::Approx(b.b.squaredNorm() / 4.0));

  FrailtyState c{Matrix::Constant(4, 1, 2.0)};
  QAccumulator two(d, idx);
  two.update(1.0, b);
  two.update(0.5, c);
  CHECK(two.weights() == std::vector<double>{0.5, 0.5});
  CHECK(maximization_step(two, cur).params.gamma.variance() ==
        doctest::Approx(0.5 * b.b.squaredNorm() / 4.0 + 0.5 * 4.0));
}

TEST_CASE("M-step beta maximises the averaged objective") {
  const auto d = small_data(7, 5);
  const auto idx = build_risk_index(d);
  QAccumulator acc(d, idx);
  StepSchedule s{2};
  for (long k = 1; k <= 6; ++k) acc.update(s.mu(k), FrailtyState{Matrix::Random(5, 1) * 0.5});
  const auto res = maximization_step(acc, {vec({0.0, 0.0}), FrailtyParam::scalar(1.0)});
  CHECK(acc.beta_objective(res.params.beta, 1).grad.norm() < 1e-6);
  auto objective = [&](const Vector& beta) { return acc.beta_objective(beta, 0).value; };
  const Vector nm = oracle::nelder_mead_max(objective, vec({0.0, 0.0}), 0.5);
  CHECK((nm - res.params.beta).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("identical covariates leave beta unchanged") {
  const auto d = make_dataset({{{1, 1, {1}}, {2, 1, {1}}}, {{3, 1, {1}}, {4, 0, {1}}}});
  const auto idx = build_risk_index(d);
  QAccumulator acc(d, idx);
  acc.update(1.0, FrailtyState{Matrix::Random(2, 1)});
  const auto res = maximization_step(acc, {vec({0.7}), FrailtyParam::scalar(1.0)});
  CHECK(res.params.beta(0) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("SPD projection") {
  Matrix m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  bool projected = false;
  const Matrix p = project_spd(m, 1e-8, &projected);
  CHECK(projected);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
  CHECK(eig.eigenvalues().minCoeff() >= 1e-8 * (1 - 1e-6));
  Matrix ok(2, 2);
  ok << 0.8, 0.226, 0.226, 0.4;
  CHECK(project_spd(ok, 1e-8, &projected).isApprox(ok));
  CHECK_FALSE(projected);
  Matrix bad = ok;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(project_spd(bad, 1e-8), Error);
}

TEST_CASE("Cox fit matches direct maximisation") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto d = small_data(seed, 6, 5);
    const auto idx = build_risk_index(d);
    const Vector beta = cox_fit(d, idx);
    auto objective = [&](const Vector& b) {
      return static_cast<double>(oracle::naive_log_partial(d, b, Matrix::Zero(6, 1)));
    };
    const Vector nm = oracle::nelder_mead_max(objective, vec({0.0, 0.0}), 0.5);
    CHECK((nm - beta).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("degenerate frailty reduces to the Cox fit") {
  SimDesign design;
  design.n_clusters = 40;
  design.beta = vec({1.0, -0.5});
  design.frailty = GaussianFrailty{0.3};
  design.seed = 4;
  const auto d = simulate(design).data;
  const auto idx = build_risk_index(d);
  auto objective = [&](const Vector& b) {
    return static_cast<double>(oracle::naive_log_partial(d, b, Matrix::Zero(40, 1)));
  };
  const Vector direct = oracle::nelder_mead_max(objective, vec({0.0, 0.0}), 0.5);
  SaemConfig cfg;
  cfg.fix_gamma = true;
  cfg.stop.max_iter = 150;
  Rng rng = make_rng(5);
  const auto res = saem_fit(d, {vec({0.0, 0.0}), FrailtyParam::scalar(1e-10)}, cfg, rng);
  CHECK((res.theta_hat.beta - direct).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(res.theta_hat.gamma.variance() == 1e-10);
}

TEST_CASE("fit bookkeeping and determinism") {
  SimDesign design;
  design.n_clusters = 30;
  design.beta = vec({2.0, 3.0});
  design.seed = 8;
  const auto d = simulate(design).data;
  SaemConfig cfg;
  cfg.stop.max_iter = 300;
  Rng a = make_rng(1), b = make_rng(1);
  const auto init = default_init(d, FrailtyParam::Kind::ScalarVariance);
  const auto r1 = saem_fit(d, init, cfg, a);
  const auto r2 = saem_fit(d, init, cfg, b);
  CHECK(r1.trajectory.size() == static_cast<std::size_t>(r1.iterations) + 1);
  CHECK(r1.trace.size() == static_cast<std::size_t>(r1.iterations));
  CHECK(r1.trajectory.front() == init.to_vector());
  CHECK(r1.algorithm == "algorithm1");
  CHECK(r1.param_names == std::vector<std::string>{"beta1", "beta2", "gamma"});
  CHECK(r1.estimate == r2.estimate);
  CHECK(r1.iterations == r2.iterations);
  for (std::size_t k = 0; k < r1.trajectory.size(); ++k) CHECK(r1.trajectory[k] == r2.trajectory[k]);
  CHECK(r1.diagnostics.accept_rate > 0.05);
  CHECK(r1.diagnostics.accept_rate < 0.95);
  if (r1.converged) CHECK(check_stop(r1.trajectory, cfg.stop.eps, cfg.stop.window));
}

TEST_CASE("divergence guard") {
  SimDesign design;
  design.n_clusters = 20;
  design.beta = vec({2.0, 3.0});
  const auto d = simulate(design).data;
  SaemConfig cfg;
  cfg.divergence_bound = 1.0;
  cfg.stop.max_iter = 50;
  Rng rng = make_rng(2);
  try {
    saem_fit(d, default_init(d, FrailtyParam::Kind::ScalarVariance), cfg, rng);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Diverged);
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("SAEM climbs the marginal partial likelihood") {
  const auto d = small_data(21, 3, 4);
  const auto idx = build_risk_index(d);
  SaemConfig cfg;
  cfg.stop.max_iter = 400;
  Rng rng = make_rng(6);
  const auto init = ModelParams{vec({0.0, 0.0}), FrailtyParam::scalar(2.0)};
  const auto res = saem_fit(d, init, cfg, rng);
  CHECK(log_marginal_partial_oracle(res.theta_hat, d, idx, 20) >= log_marginal_partial_oracle(init, d, idx, 20));
}
