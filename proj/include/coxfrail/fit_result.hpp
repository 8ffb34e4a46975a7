#pragma once

#include "coxfrail/data_model.hpp"
#include "coxfrail/frailty_sampler.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace coxfrail {

// One row of the per-iteration trace file.
struct TraceRow {
  int iteration = 0;
  Vector theta;
  double accept_rate = 0.0;
  double mu = 0.0;
  // Truncated (extended-model) runs only.
  bool has_truncation = false;
  int kappa = 0;
  bool restart = false;
  double jump = 0.0;
  double eps = 0.0;
};

struct WeibullBaseline {
  double lambda = 1.0;
  double rho = 1.0;
};

struct FitResult {
  std::string algorithm;
  ModelParams theta_hat;
  std::optional<WeibullBaseline> baseline;  // parametric comparator only
  std::vector<std::string> param_names;     // names of `estimate` entries
  Vector estimate;
  std::vector<Vector> trajectory;           // iterations + 1 points, starting at the initial value
  std::vector<TraceRow> trace;
  int iterations = 0;
  bool converged = false;
  McmcDiagnostics diagnostics;              // pooled over all iterations
  Vector proposal_sd;                       // final (frozen) proposal scale
  int restarts = 0;
  std::uint64_t seed = 0;
  FrailtyState final_frailty;
  bool spd_projected = false;               // an M-step needed the eigenvalue floor

  // Model-based standard errors, filled by the Fisher information step.
  std::optional<Vector> se;
};

}  // namespace coxfrail
