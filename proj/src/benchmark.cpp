#include "coxfrail/benchmark.hpp"

#include "coxfrail/error.hpp"
#include "coxfrail/io.hpp"
#include "coxfrail/weibull.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <thread>

namespace coxfrail {

namespace {

constexpr std::uint64_t kFitStream = 101;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

RepOutcome run_rep(const TableDesign& table, Algorithm algorithm, const FitOptions& fit, std::uint64_t seed) {
  RepOutcome out;
  try {
    SimDesign d = table.design;
    d.seed = seed;
    const SimulatedData sim = simulate(d);
    FitOptions opt = fit;
    opt.algorithm = algorithm;
    const FitResult res = fit_model(sim.data, opt, seed);
    out.estimate = res.theta_hat.to_vector();
    if (res.baseline) out.baseline = vec({res.baseline->lambda, res.baseline->rho});
    out.converged = res.converged;
    out.iterations = res.iterations;
    out.restarts = res.restarts;
  } catch (const Error& e) {
    out.error = e.what();
    out.diverged = e.kind() == ErrorKind::Diverged;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

void summarise(AlgorithmSummary& s, Eigen::Index dim) {
  s.mean = Vector::Zero(dim);
  for (const auto& r : s.reps) {
    if (r.estimate) {
      ++s.n_ok;
      s.mean += *r.estimate;
      if (r.converged) ++s.n_converged;
    } else {
      ++s.n_failed;
      if (r.diverged) ++s.n_diverged;
    }
  }
  if (s.n_ok == 0) {
    s.mean = Vector::Constant(dim, kNaN);
    return;
  }
  s.mean /= static_cast<double>(s.n_ok);
  if (s.n_ok < 2) return;
  s.sd = Vector::Zero(dim);
  for (const auto& r : s.reps)
    if (r.estimate) s.sd += (*r.estimate - s.mean).cwiseAbs2();
  s.sd = (s.sd / static_cast<double>(s.n_ok - 1)).cwiseSqrt();
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "algorithm1") return Algorithm::Algorithm1;
  if (name == "algorithm2") return Algorithm::Algorithm2;
  if (name == "weibull") return Algorithm::Weibull;
  throw_input("unknown algorithm '" + name + "' (expected algorithm1, algorithm2 or weibull)");
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Algorithm1: return "algorithm1";
    case Algorithm::Algorithm2: return "algorithm2";
    case Algorithm::Weibull: return "weibull";
  }
  return "";
}

FitResult fit_model(const SurvivalDataset& data, const FitOptions& options, std::uint64_t seed) {
  const auto kind = data.n_frailty() == 1 ? FrailtyParam::Kind::ScalarVariance : FrailtyParam::Kind::Covariance;
  Rng rng = make_rng(seed, kFitStream);
  FitResult res;
  switch (options.algorithm) {
    case Algorithm::Algorithm1:
      res = saem_fit(data, default_init(data, kind), options.saem, rng);
      break;
    case Algorithm::Algorithm2: {
      TruncatedConfig cfg = options.truncated;
      cfg.saem = options.saem;
      res = truncated_fit(data, default_extended_init(data, kind, cfg.sigma_beta2), cfg, rng);
      break;
    }
    case Algorithm::Weibull:
      res = weibull_saem_fit(data, weibull_init(data, kind), options.saem, rng);
      break;
  }
  res.seed = seed;
  return res;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t rep) {
  Rng rng = make_rng(seed, 0x5eed0000ULL + rep);
  return rng();
}

unsigned resolve_jobs(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("COXFRAIL_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

TableDesign table_design(const std::string& table, std::optional<std::size_t> n_clusters) {
  TableDesign t;
  t.table = table;
  SimDesign& d = t.design;
  d.cluster_sizes = {4};
  d.baseline = WeibullHazard{0.01, 1.5};
  d.beta = vec({2.0, 3.0});
  d.frailty = GaussianFrailty{0.7};
  d.n_clusters = 250;
  t.truth = vec({2.0, 3.0, 0.7});
  t.algorithms = {Algorithm::Algorithm1};
  if (table == "t1") {
    d.n_clusters = 50;
  } else if (table == "t2") {
    t.algorithms = {Algorithm::Algorithm1, Algorithm::Weibull};
  } else if (table == "t3") {
    d.baseline = GompertzHazard{0.08, 2.0};
    t.algorithms = {Algorithm::Algorithm1, Algorithm::Weibull};
  } else if (table == "t4") {
    d.censor_target = 0.2;
  } else if (table == "t5") {
    d.censor_target = 0.4;
  } else if (table == "t6") {
    d.frailty = MixtureFrailty{};
    t.truth(2) = kNaN;
  } else if (table == "t7") {
    Matrix sigma(2, 2);
    sigma << 0.8, 0.226, 0.226, 0.4;
    d.frailty = GaussianCovFrailty{sigma};
    d.n_clusters = 39;
    // Fixed group configuration shared by all repetitions.
    Rng sizes = make_rng(20240607, 0);
    d.cluster_sizes = log_uniform_sizes(d.n_clusters, 20.0, 250.0, sizes);
    t.truth = vec({2.0, 3.0, 0.8, 0.4, 0.226});
  } else {
    throw_input("unknown table '" + table + "' (expected t1 to t7)");
  }
  if (n_clusters) {
    if (*n_clusters < 1) throw_input("number of clusters must be positive");
    if (table == "t7") {
      Rng sizes = make_rng(20240607, 0);
      d.cluster_sizes = log_uniform_sizes(*n_clusters, 20.0, 250.0, sizes);
    }
    d.n_clusters = *n_clusters;
  }
  const bool cov = std::holds_alternative<GaussianCovFrailty>(d.frailty);
  const ModelParams probe{d.beta, cov ? FrailtyParam::covariance(std::get<GaussianCovFrailty>(d.frailty).sigma)
                                      : FrailtyParam::scalar(0.7)};
  t.names = probe.names();
  return t;
}

const AlgorithmSummary& BenchmarkResult::summary(Algorithm a) const {
  for (const auto& s : algorithms)
    if (s.algorithm == a) return s;
  throw_input("algorithm " + algorithm_name(a) + " was not run");
}

BenchmarkResult run_benchmark(const TableDesign& design, const BenchmarkOptions& options) {
  if (options.reps < 1) throw_input("reps must be at least 1");
  BenchmarkResult result;
  result.design = design;
  result.reps = options.reps;
  result.seed = options.seed;
  const auto algorithms = options.algorithms ? *options.algorithms : design.algorithms;

  struct Task {
    std::size_t alg;
    std::size_t rep;
  };
  std::vector<Task> tasks;
  for (std::size_t a = 0; a < algorithms.size(); ++a) {
    result.algorithms.push_back(AlgorithmSummary{algorithms[a], std::vector<RepOutcome>(options.reps), {}, {}, 0, 0, 0, 0});
    for (std::size_t r = 0; r < options.reps; ++r) tasks.push_back({a, r});
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      const Task& task = tasks[t];
      result.algorithms[task.alg].reps[task.rep] =
          run_rep(design, algorithms[task.alg], options.fit, derive_seed(options.seed, task.rep));
    }
  };
  const unsigned jobs = std::min<unsigned>(resolve_jobs(options.jobs), static_cast<unsigned>(tasks.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& s : result.algorithms) summarise(s, design.truth.size());
  return result;
}

void write_summary_csv(std::ostream& out, const BenchmarkResult& result) {
  out << "table,algorithm,parameter,truth,mean,sd,reps,ok,failed,diverged,converged\n";
  for (const auto& s : result.algorithms) {
    for (Eigen::Index k = 0; k < result.design.truth.size(); ++k) {
      out << result.design.table << ',' << algorithm_name(s.algorithm) << ','
          << result.design.names[static_cast<std::size_t>(k)] << ',' << csv_number(result.design.truth(k)) << ','
          << csv_number(s.mean(k)) << ',' << (s.sd.size() ? csv_number(s.sd(k)) : "") << ',' << result.reps << ','
          << s.n_ok << ',' << s.n_failed << ',' << s.n_diverged << ',' << s.n_converged << '\n';
    }
    if (s.algorithm != Algorithm::Weibull) continue;
    Vector mean = Vector::Zero(2);
    std::size_t n = 0;
    for (const auto& r : s.reps)
      if (r.baseline) {
        mean += *r.baseline;
        ++n;
      }
    const auto* w = std::get_if<WeibullHazard>(&result.design.design.baseline);
    const Vector truth = w ? vec({w->lambda, w->rho}) : vec({kNaN, kNaN});
    const char* names[] = {"lambda", "rho"};
    for (Eigen::Index k = 0; k < 2; ++k) {
      double sd = kNaN;
      if (n > 1) {
        double ss = 0.0;
        for (const auto& r : s.reps)
          if (r.baseline) ss += std::pow((*r.baseline)(k) - mean(k) / static_cast<double>(n), 2);
        sd = std::sqrt(ss / static_cast<double>(n - 1));
      }
      out << result.design.table << ",weibull," << names[k] << ',' << csv_number(truth(k)) << ','
          << csv_number(n ? mean(k) / static_cast<double>(n) : kNaN) << ',' << csv_number(sd) << ',' << result.reps
          << ',' << s.n_ok << ',' << s.n_failed << ',' << s.n_diverged << ',' << s.n_converged << '\n';
    }
  }
}

}  // namespace coxfrail
