#include "builders.hpp"
#include "oracles.hpp"

#include "coxfrail/data_model.hpp"
#include "coxfrail/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>

using namespace coxfrail;
using testing_support::make_dataset;
using testing_support::vec;

namespace {

std::set<std::size_t> risk_set(const RiskSetIndex& idx, std::size_t e) {
  auto s = idx.at_risk(e);
  return {s.begin(), s.end()};
}

// Risk sets keyed by time, with members described by (cluster id, position).
std::map<double, std::multiset<std::pair<std::string, double>>> described(const SurvivalDataset& d) {
  const RiskSetIndex idx = build_risk_index(d);
  std::map<double, std::multiset<std::pair<std::string, double>>> out;
  for (std::size_t e = 0; e < idx.n_event_times(); ++e)
    for (auto j : idx.at_risk(e)) out[idx.event_times[e]].insert({d.clusters()[d.cluster_of(j)].id, d.time(j)});
  return out;
}

}  // namespace

TEST_CASE("risk sets on ordered times") {
  const auto d = make_dataset({{{3, 1, {0}}, {1, 1, {0}}, {2, 1, {0}}}});
  const RiskSetIndex idx = build_risk_index(d);
  REQUIRE(idx.n_event_times() == 3);
  CHECK(idx.event_times == std::vector<double>{1, 2, 3});
  CHECK(risk_set(idx, 0) == std::set<std::size_t>{0, 1, 2});
  CHECK(risk_set(idx, 1) == std::set<std::size_t>{0, 2});
  CHECK(risk_set(idx, 2) == std::set<std::size_t>{0});
}

TEST_CASE("tied events share the risk set") {
  const auto d = make_dataset({{{5, 1, {0}}, {5, 1, {1}}}});
  const RiskSetIndex idx = build_risk_index(d);
  REQUIRE(idx.n_event_times() == 1);
  CHECK(idx.n_deaths(0) == 2);
  CHECK(risk_set(idx, 0) == std::set<std::size_t>{0, 1});
}

TEST_CASE("censored at an event time stays at risk") {
  const auto d = make_dataset({{{2, 1, {0}}, {2, 0, {1}}, {1, 0, {0}}}});
  const RiskSetIndex idx = build_risk_index(d);
  REQUIRE(idx.n_event_times() == 1);
  CHECK(risk_set(idx, 0) == std::set<std::size_t>{0, 1});
}

TEST_CASE("all censored is rejected") {
  const auto d = make_dataset({{{2, 0, {0}}, {3, 0, {1}}}});
  CHECK_THROWS_WITH(build_risk_index(d), "no events");
}

TEST_CASE("risk sets match the definition, nest, and contain their events") {
  Rng rng = make_rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    oracle::RandomDataSpec spec;
    spec.n_clusters = 1 + rep % 6;
    spec.ties = rep % 2 == 0;
    const auto d = oracle::random_dataset(spec, rng);
    const RiskSetIndex idx = build_risk_index(d);
    const auto brute = oracle::brute_force_risk_sets(d);
    REQUIRE(brute.size() == idx.n_event_times());
    for (std::size_t e = 0; e < brute.size(); ++e) {
      CHECK(brute[e].first == idx.event_times[e]);
      CHECK(brute[e].second == risk_set(idx, e));
      for (auto j : idx.events_at(e)) {
        CHECK(d.status(j) == 1);
        CHECK(d.time(j) == idx.event_times[e]);
        CHECK(risk_set(idx, e).count(j) == 1);
      }
      if (e > 0) {
        const auto later = risk_set(idx, e), earlier = risk_set(idx, e - 1);
        CHECK(std::includes(earlier.begin(), earlier.end(), later.begin(), later.end()));
      }
    }
  }
}

TEST_CASE("risk index is invariant under permutations") {
  Rng rng = make_rng(11);
  oracle::RandomDataSpec spec;
  spec.n_clusters = 5;
  spec.ties = true;
  const auto d = oracle::random_dataset(spec, rng);
  auto clusters = d.clusters();
  std::reverse(clusters.begin(), clusters.end());
  for (auto& c : clusters) std::shuffle(c.individuals.begin(), c.individuals.end(), rng);
  const SurvivalDataset permuted(clusters);
  CHECK(described(d) == described(permuted));
}

TEST_CASE("linear predictor") {
  const auto shared = make_dataset({{{1, 1, {1, 0}}}});
  CHECK(linear_predictor({vec({0, 0}), FrailtyParam::scalar(1)}, FrailtyState::zeros(1, 1), shared, 0, 0) == 0.0);
  FrailtyState b{Matrix::Constant(1, 1, 0.5)};
  CHECK(linear_predictor({vec({2, 3}), FrailtyParam::scalar(1)}, b, shared, 0, 0) == doctest::Approx(2.5));

  const auto corr = with_frailty_design(make_dataset({{{1, 1, {1, 1}}}}), FrailtyDesign::Correlated);
  FrailtyState bc{Matrix(1, 2)};
  bc.b << 0.1, 0.0;
  CHECK(linear_predictor({vec({2, 3}), FrailtyParam::covariance(Matrix::Identity(2, 2))}, bc, corr, 0, 0) ==
        doctest::Approx(5.1));
  // The slope b1 adds to every coefficient: b0 + Z (beta + b1).
  bc.b << 0.1, 0.2;
  CHECK(linear_predictor({vec({2, 3}), FrailtyParam::covariance(Matrix::Identity(2, 2))}, bc, corr, 0, 0) ==
        doctest::Approx(0.1 + 2.2 + 3.2));
  CHECK_THROWS_AS(linear_predictor({vec({2}), FrailtyParam::scalar(1)}, b, shared, 0, 0), Error);
  CHECK_THROWS_AS(linear_predictor({vec({2, 3}), FrailtyParam::scalar(1)}, b, shared, 1, 0), Error);
}

TEST_CASE("dataset validation") {
  CHECK_THROWS_AS(make_dataset({}), Error);
  CHECK_THROWS_AS(make_dataset({{}}), Error);
  CHECK_THROWS_AS(make_dataset({{{0.0, 1, {0}}}}), Error);
  CHECK_THROWS_AS(make_dataset({{{-1.0, 1, {0}}}}), Error);
  CHECK_THROWS_AS(make_dataset({{{1.0, 2, {0}}}}), Error);
  CHECK_THROWS_AS(make_dataset({{{1.0, 1, {0}}, {2.0, 1, {0, 1}}}}), Error);
  CHECK_THROWS_AS(make_dataset({{{1.0, 1, {std::nan("")}}}}), Error);
  const auto d = make_dataset({{{1, 1, {0}}, {2, 0, {1}}}, {{3, 1, {1}}}});
  CHECK(d.n_clusters() == 2);
  CHECK(d.n_individuals() == 3);
  CHECK(d.n_events() == 2);
  CHECK(d.cluster_size(0) == 2);
  CHECK(d.cluster_of(2) == 1);
}

TEST_CASE("frailty parameter") {
  CHECK_THROWS_AS(FrailtyParam::scalar(0.0), Error);
  CHECK_THROWS_AS(FrailtyParam::scalar(-1.0), Error);
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(FrailtyParam::covariance(bad), Error);
  Matrix asym(2, 2);
  asym << 1, 0.1, 0.2, 1;
  CHECK_THROWS_AS(FrailtyParam::covariance(asym), Error);

  Matrix s(2, 2);
  s << 0.8, 0.226, 0.226, 0.4;
  const auto p = FrailtyParam::covariance(s);
  CHECK(p.to_vector().isApprox(vec({0.8, 0.4, 0.226})));
  CHECK(p.names() == std::vector<std::string>{"sigma00", "sigma11", "sigma01"});
  const auto back = FrailtyParam::from_vector(FrailtyParam::Kind::Covariance, 2, p.to_vector());
  CHECK(back.sigma().isApprox(s));

  const ModelParams m{vec({2, 3}), FrailtyParam::scalar(0.7)};
  CHECK(m.names() == std::vector<std::string>{"beta1", "beta2", "gamma"});
  const auto m2 = ModelParams::from_vector(m.to_vector(), 2, FrailtyParam::Kind::ScalarVariance, 1);
  CHECK(m2.to_vector().isApprox(m.to_vector()));
}

TEST_CASE("correlated design columns") {
  const auto d = with_frailty_design(make_dataset({{{1, 1, {1, 0}}, {2, 1, {1, 1}}}}), FrailtyDesign::Correlated);
  CHECK(d.n_frailty() == 2);
  CHECK(d.w()(0, 0) == 1.0);
  CHECK(d.w()(0, 1) == 1.0);
  CHECK(d.w()(1, 1) == 2.0);
  const auto s = with_frailty_design(d, FrailtyDesign::Shared);
  CHECK(s.n_frailty() == 1);
  CHECK(s.w()(1, 0) == 1.0);
}
