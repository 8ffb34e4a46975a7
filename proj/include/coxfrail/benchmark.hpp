#pragma once

// Fit dispatch shared by the CLI and the repetition harness, and the
// simulation designs of the numerical study run many times over a worker
// pool.

#include "coxfrail/data_model.hpp"
#include "coxfrail/fit_result.hpp"
#include "coxfrail/saem.hpp"
#include "coxfrail/simulator.hpp"
#include "coxfrail/truncated_saem.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace coxfrail {

enum class Algorithm { Algorithm1, Algorithm2, Weibull };

Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm a);

struct FitOptions {
  Algorithm algorithm = Algorithm::Algorithm1;
  SaemConfig saem;
  TruncatedConfig truncated;  // its `saem` member is replaced by `saem` above
};

// Runs the chosen estimator from its default starting point with an RNG
// stream derived from `seed`; the frailty model is scalar when the design
// has one column, a full covariance otherwise.
FitResult fit_model(const SurvivalDataset& data, const FitOptions& options, std::uint64_t seed);

// Seed of repetition `rep` under the base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t rep);

// Worker count: explicit value if > 0, else COXFRAIL_JOBS, else the
// hardware concurrency.
unsigned resolve_jobs(int requested);

struct TableDesign {
  std::string table;
  SimDesign design;
  std::vector<Algorithm> algorithms;
  std::vector<std::string> names;  // estimate names shared by all algorithms (beta, gamma)
  Vector truth;                    // NaN where no truth is asserted
};

// t1 (consistency, N clusters of 4), t2 (Weibull, N = 250), t3 (Gompertz),
// t4 / t5 (20% / 40% censoring), t6 (mixture frailty), t7 (correlated).
TableDesign table_design(const std::string& table, std::optional<std::size_t> n_clusters = std::nullopt);

struct RepOutcome {
  std::optional<Vector> estimate;  // (beta, gamma)
  std::optional<Vector> baseline;  // (lambda, rho), Weibull only
  bool converged = false;
  int iterations = 0;
  int restarts = 0;
  std::string error;               // empty on success
  bool diverged = false;
};

struct AlgorithmSummary {
  Algorithm algorithm;
  std::vector<RepOutcome> reps;
  Vector mean;
  Vector sd;  // empty with fewer than two successful repetitions
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  std::size_t n_diverged = 0;
  std::size_t n_converged = 0;
};

struct BenchmarkResult {
  TableDesign design;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::vector<AlgorithmSummary> algorithms;

  const AlgorithmSummary& summary(Algorithm a) const;
};

struct BenchmarkOptions {
  std::size_t reps = 100;
  std::uint64_t seed = 1;
  int jobs = 0;
  FitOptions fit;
  std::optional<std::vector<Algorithm>> algorithms;  // overrides the table's list
};

BenchmarkResult run_benchmark(const TableDesign& design, const BenchmarkOptions& options);

// One row per (algorithm, parameter): table,algorithm,parameter,truth,mean,sd,reps,ok,failed,diverged,converged
void write_summary_csv(std::ostream& out, const BenchmarkResult& result);

}  // namespace coxfrail
