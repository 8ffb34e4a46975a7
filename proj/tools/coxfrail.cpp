// coxfrail: fit, simulate, benchmark and standard-error commands.
//
// Every option can also be given in a `key = value` file passed with
// --config (keys are the long option names without dashes); command-line
// values take precedence over the file, which takes precedence over the
// defaults.

#include "coxfrail/benchmark.hpp"
#include "coxfrail/error.hpp"
#include "coxfrail/fisher.hpp"
#include "coxfrail/io.hpp"
#include "coxfrail/partial_likelihood.hpp"
#include "coxfrail/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace coxfrail;

namespace {

enum Exit { kOk = 0, kInput = 1, kNotConverged = 2, kNumerical = 3 };

struct Key {
  std::string name;
  std::string fallback;  // empty: no default
  std::string help;
};

const std::vector<Key> kSaemKeys = {
    {"k0", "100", "iterations without memory (step size 1)"},
    {"max-iter", "2000", "maximum number of SAEM iterations"},
    {"eps", "1e-4", "relative-change threshold of the stopping rule"},
    {"window", "3", "consecutive iterations below eps required to stop"},
    {"n-inner", "5", "MH sweeps per iteration"},
    {"proposal-sd", "", "initial proposal sd per frailty coordinate (comma list, default 0.5)"},
    {"target-accept", "0.35", "target MH acceptance rate during burn-in"},
    {"adapt", "true", "tune the proposal sd during burn-in"},
    {"history-cap", "500", "frailty snapshots kept for the beta part of Q"},
    {"inner-tol", "1e-8", "beta ascent tolerance"},
    {"inner-max", "25", "beta ascent iteration cap"},
    {"sigma-beta2", "10", "algorithm2: variance of the latent beta"},
    {"eps-exponent", "0.4", "algorithm2: eps_k = k^-exponent"},
    {"max-restarts", "50", "algorithm2: restart cap"},
};

class Settings {
 public:
  Settings(CLI::App* app, std::vector<Key> keys) : app_(app), keys_(std::move(keys)) {
    for (const auto& k : keys_) {
      cli_[k.name];
      app_->add_option("--" + k.name, cli_[k.name], k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]"));
    }
    app_->add_option("--config", config_, "key = value configuration file");
  }

  void resolve() {
    KeyValues file;
    if (!config_.empty()) file = read_key_value_file(config_);
    std::set<std::string> known;
    for (const auto& k : keys_) known.insert(k.name);
    for (const auto& [key, value] : file)
      if (!known.count(key)) throw_input(config_ + ": unknown key '" + key + "'");
    for (const auto& k : keys_) {
      if (app_->count("--" + k.name) > 0) {
        values_[k.name] = cli_[k.name];
        provided_.insert(k.name);
      } else if (auto it = file.find(k.name); it != file.end()) {
        values_[k.name] = it->second;
        provided_.insert(k.name);
      } else if (!k.fallback.empty()) {
        values_[k.name] = k.fallback;
      }
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  bool provided(const std::string& key) const { return provided_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw_input("missing required option --" + key);
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw_input("option --" + key + ": '" + s + "' is not a number");
    return v;
  }

  long integer(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw_input("option --" + key + ": '" + s + "' is not an integer");
    return v;
  }

  std::uint64_t seed() const {
    const std::string& s = str("seed");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || s[0] == '-') throw_input("option --seed: '" + s + "' is not a non-negative integer");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw_input("option --" + key + ": expected true or false, got '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      char* end = nullptr;
      const double v = std::strtod(item.c_str(), &end);
      if (item.empty() || *end != '\0') throw_input("option --" + key + ": '" + item + "' is not a number");
      out.push_back(v);
    }
    if (out.empty()) throw_input("option --" + key + " is empty");
    return out;
  }

 private:
  CLI::App* app_;
  std::vector<Key> keys_;
  std::map<std::string, std::string> cli_;
  std::map<std::string, std::string> values_;
  std::set<std::string> provided_;
  std::string config_;
};

std::vector<Key> join(std::vector<Key> a, const std::vector<Key>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

FitOptions fit_options(const Settings& s) {
  FitOptions o;
  if (s.has("algorithm")) o.algorithm = parse_algorithm(s.str("algorithm"));
  SaemConfig& c = o.saem;
  c.schedule.k0 = static_cast<int>(s.integer("k0"));
  c.stop.max_iter = static_cast<int>(s.integer("max-iter"));
  c.stop.eps = s.num("eps");
  c.stop.window = static_cast<int>(s.integer("window"));
  c.mcmc.n_inner = static_cast<int>(s.integer("n-inner"));
  if (s.has("proposal-sd")) c.mcmc.proposal_sd = to_vector(s.list("proposal-sd"));
  c.mcmc.target_accept = s.num("target-accept");
  c.mcmc.adapt = s.flag("adapt");
  c.history_cap = static_cast<std::size_t>(s.integer("history-cap"));
  c.inner_tol = s.num("inner-tol");
  c.inner_max = static_cast<int>(s.integer("inner-max"));
  o.truncated.sigma_beta2 = s.num("sigma-beta2");
  o.truncated.eps.exponent = s.num("eps-exponent");
  o.truncated.max_restarts = static_cast<int>(s.integer("max-restarts"));

  if (c.schedule.k0 < 0) throw_input("--k0 must be non-negative");
  if (c.stop.max_iter < 1) throw_input("--max-iter must be positive");
  if (c.stop.window < 1) throw_input("--window must be positive");
  if (!(c.stop.eps > 0.0)) throw_input("--eps must be positive");
  if (c.mcmc.n_inner < 1) throw_input("--n-inner must be at least 1");
  if (!(c.mcmc.target_accept > 0.0 && c.mcmc.target_accept < 1.0)) throw_input("--target-accept must lie in (0, 1)");
  if (c.history_cap < 1) throw_input("--history-cap must be positive");
  if (!(o.truncated.sigma_beta2 > 0.0)) throw_input("--sigma-beta2 must be positive");
  return o;
}

SurvivalDataset load_data(const Settings& s) {
  SurvivalDataset data = read_csv_file(s.str("data"));
  const std::string design = s.str("frailty-design");
  if (design == "shared") return with_frailty_design(data, FrailtyDesign::Shared);
  if (design == "correlated") return with_frailty_design(data, FrailtyDesign::Correlated);
  if (design != "auto") throw_input("--frailty-design must be auto, shared or correlated");
  return data;
}

void attach_se(FitResult& res, const SurvivalDataset& data, const Settings& s, McmcConfig mcmc, FisherEstimate& est) {
  const RiskSetIndex index = build_risk_index(data);
  mcmc.proposal_sd = res.proposal_sd;
  Rng rng = make_rng(res.seed, 202);
  est = estimate_fisher(res.theta_hat, data, index, mcmc, static_cast<std::size_t>(s.integer("fisher-m")),
                        s.integer("fisher-burn-in"), rng, &res.final_frailty);
  res.se = est.se;
}

int cmd_fit(const Settings& s) {
  const SurvivalDataset data = load_data(s);
  const FitOptions opt = fit_options(s);
  FitResult res = fit_model(data, opt, s.seed());
  FisherEstimate est;
  const bool want_se = s.flag("se");
  if (want_se) {
    if (opt.algorithm == Algorithm::Weibull) throw_input("--se is available for the partial-likelihood fits only");
    attach_se(res, data, s, opt.saem.mcmc, est);
  }
  write_json_file(s.str("out"), result_json(res, want_se ? &est : nullptr));
  std::ofstream trace(s.str("trace"));
  if (!trace) throw_input("cannot open '" + s.str("trace") + "' for writing");
  write_trace_csv(trace, res);
  std::cout << "estimates:";
  for (std::size_t k = 0; k < res.param_names.size(); ++k)
    std::cout << ' ' << res.param_names[k] << '=' << format_double(res.estimate(static_cast<Eigen::Index>(k)));
  std::cout << "\niterations: " << res.iterations << (res.converged ? " (converged)" : " (not converged)") << '\n';
  return res.converged ? kOk : kNotConverged;
}

int cmd_se(const Settings& s) {
  const SurvivalDataset data = load_data(s);
  std::ifstream in(s.str("result"));
  if (!in) throw_input("cannot open '" + s.str("result") + "'");
  nlohmann::ordered_json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw_input(s.str("result") + ": " + e.what());
  }
  if (!doc.contains("estimates") || !doc["estimates"].is_object()) throw_input("result file has no estimates");
  if (doc.value("algorithm", "") == "weibull") throw_input("standard errors are available for the partial-likelihood fits only");
  std::vector<double> theta;
  for (const auto& [key, value] : doc["estimates"].items()) {
    if (!value.is_number()) throw_input("estimate '" + key + "' is not a number");
    theta.push_back(value.get<double>());
  }
  const auto kind = data.n_frailty() == 1 ? FrailtyParam::Kind::ScalarVariance : FrailtyParam::Kind::Covariance;
  const ModelParams p = ModelParams::from_vector(to_vector(theta), data.n_fixed(), kind, data.n_frailty());
  const RiskSetIndex index = build_risk_index(data);
  McmcConfig mcmc;
  mcmc.n_inner = static_cast<int>(s.integer("n-inner"));
  if (s.has("proposal-sd")) mcmc.proposal_sd = to_vector(s.list("proposal-sd"));
  Rng rng = make_rng(s.seed(), 202);
  const FisherEstimate est = estimate_fisher(p, data, index, mcmc, static_cast<std::size_t>(s.integer("fisher-m")),
                                             s.integer("fisher-burn-in"), rng);
  const auto names = p.names();
  nlohmann::ordered_json se = nullptr;
  if (est.se) {
    se = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < names.size(); ++k) se[names[k]] = (*est.se)(static_cast<Eigen::Index>(k));
  }
  doc["se"] = se;
  doc["diagnostics"]["fisher_M"] = est.M;
  doc["diagnostics"]["fisher_burn_in"] = est.burn_in;
  doc["diagnostics"]["fisher_condition_number"] =
      std::isfinite(est.condition_number) ? nlohmann::ordered_json(est.condition_number) : nlohmann::ordered_json(nullptr);
  doc["diagnostics"]["fisher_min_eigenvalue"] = est.min_eigenvalue;
  write_json_file(s.str("out"), doc);
  if (!est.se) {
    std::cerr << "information matrix is not positive definite; standard errors unavailable\n";
    return kNumerical;
  }
  for (std::size_t k = 0; k < names.size(); ++k)
    std::cout << names[k] << ": se=" << format_double((*est.se)(static_cast<Eigen::Index>(k))) << '\n';
  return kOk;
}

int cmd_simulate(const Settings& s) {
  SimulatedData sim = [&] {
    if (s.flag("eortc")) return eortc_analog(s.seed());
    SimDesign d;
    if (s.has("table")) d = table_design(s.str("table")).design;
    if (s.provided("clusters") || !s.has("table")) d.n_clusters = static_cast<std::size_t>(s.integer("clusters"));
    if (s.provided("size") || !s.has("table")) {
      d.cluster_sizes.clear();
      for (double v : s.list("size")) {
        if (v < 1 || v != std::floor(v)) throw_input("--size entries must be positive integers");
        d.cluster_sizes.push_back(static_cast<std::size_t>(v));
      }
    } else if (s.provided("clusters") && d.cluster_sizes.size() != 1) {
      Rng sizes = make_rng(20240607, 0);
      d.cluster_sizes = log_uniform_sizes(d.n_clusters, 20.0, 250.0, sizes);
    }
    if (s.provided("baseline") || s.provided("lambda") || s.provided("rho") || s.provided("alpha") || !s.has("table")) {
      const std::string b = s.str("baseline");
      if (b == "weibull") {
        d.baseline = WeibullHazard{s.has("lambda") ? s.num("lambda") : 0.01, s.num("rho")};
      } else if (b == "gompertz") {
        d.baseline = GompertzHazard{s.has("lambda") ? s.num("lambda") : 0.08, s.num("alpha")};
      } else {
        throw_input("--baseline must be weibull or gompertz");
      }
    }
    if (s.provided("beta") || !s.has("table")) d.beta = to_vector(s.list("beta"));
    if (s.provided("frailty") || s.provided("gamma") || s.provided("sigma") || !s.has("table")) {
      const std::string f = s.str("frailty");
      if (f == "gaussian") {
        d.frailty = GaussianFrailty{s.num("gamma")};
      } else if (f == "correlated") {
        const auto v = s.list("sigma");
        if (v.size() != 3) throw_input("--sigma expects sigma0^2,sigma1^2,sigma01");
        Matrix sigma(2, 2);
        sigma << v[0], v[2], v[2], v[1];
        d.frailty = GaussianCovFrailty{sigma};
      } else if (f == "mixture") {
        d.frailty = MixtureFrailty{};
      } else {
        throw_input("--frailty must be gaussian, correlated or mixture");
      }
    }
    if (s.provided("censor") || !s.has("table")) d.censor_target = s.num("censor");
    if (s.provided("covariate-p") || !s.has("table")) d.covariate_p = s.num("covariate-p");
    d.seed = s.seed();
    return simulate(d);
  }();
  write_csv_file(s.str("out"), sim.data);
  if (s.has("frailty-out")) {
    std::ofstream out(s.str("frailty-out"));
    if (!out) throw_input("cannot open '" + s.str("frailty-out") + "' for writing");
    write_frailty_csv(out, sim.data, sim.true_frailty);
  }
  std::size_t censored = sim.data.n_individuals() - sim.data.n_events();
  std::cout << "clusters: " << sim.data.n_clusters() << "\nindividuals: " << sim.data.n_individuals()
            << "\ncensored fraction: "
            << static_cast<double>(censored) / static_cast<double>(sim.data.n_individuals()) << '\n';
  return kOk;
}

int cmd_benchmark(const Settings& s) {
  std::optional<std::size_t> n;
  if (s.has("clusters")) {
    const long v = s.integer("clusters");
    if (v < 1) throw_input("--clusters must be positive");
    n = static_cast<std::size_t>(v);
  }
  const TableDesign design = table_design(s.str("table"), n);
  BenchmarkOptions opt;
  const long reps = s.integer("reps");
  if (reps < 1) throw_input("--reps must be at least 1");
  opt.reps = static_cast<std::size_t>(reps);
  opt.seed = s.seed();
  opt.jobs = s.has("jobs") ? static_cast<int>(s.integer("jobs")) : 0;
  opt.fit = fit_options(s);
  if (s.has("algorithms")) {
    std::vector<Algorithm> algs;
    std::stringstream ss(s.str("algorithms"));
    std::string item;
    while (std::getline(ss, item, ',')) algs.push_back(parse_algorithm(item));
    opt.algorithms = algs;
  }
  const BenchmarkResult result = run_benchmark(design, opt);
  std::ofstream out(s.str("out"));
  if (!out) throw_input("cannot open '" + s.str("out") + "' for writing");
  write_summary_csv(out, result);
  write_summary_csv(std::cout, result);
  for (const auto& a : result.algorithms)
    if (a.n_failed)
      std::cerr << algorithm_name(a.algorithm) << ": " << a.n_failed << " of " << result.reps
                << " repetitions failed (" << a.n_diverged << " diverged)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cox frailty models by MCMC-SAEM on the integrated partial likelihood"};
  app.require_subcommand(1);

  const std::vector<Key> data_keys = {
      {"data", "", "input CSV: cluster,time,status,z1..zb[,w1..wf]"},
      {"frailty-design", "auto", "auto (from the CSV), shared or correlated"},
      {"seed", "", "random seed (required)"},
  };
  const std::vector<Key> fisher_keys = {
      {"fisher-m", "10000", "MH draws for the information estimate"},
      {"fisher-burn-in", "-1", "discarded draws (-1: M/10)"},
  };

  auto* fit = app.add_subcommand("fit", "estimate a frailty model from a CSV dataset");
  Settings fit_s(fit, join(join(join(data_keys, kSaemKeys), fisher_keys),
                           {{"algorithm", "algorithm1", "algorithm1, algorithm2 or weibull"},
                            {"out", "result.json", "result file"},
                            {"trace", "trace.csv", "per-iteration trace file"},
                            {"se", "false", "compute model-based standard errors"}}));

  auto* se = app.add_subcommand("se", "standard errors at the estimates of a result file");
  Settings se_s(se, join(join(data_keys, fisher_keys),
                         {{"result", "", "result.json from fit"},
                          {"out", "result.json", "output file"},
                          {"n-inner", "5", "MH sweeps per draw"},
                          {"proposal-sd", "", "proposal sd per frailty coordinate"}}));

  auto* sim = app.add_subcommand("simulate", "simulate a clustered survival dataset");
  Settings sim_s(sim, {{"table", "", "start from a study design t1..t7"},
                       {"eortc", "false", "synthetic bladder-cancer-shaped dataset"},
                       {"clusters", "50", "number of clusters"},
                       {"size", "4", "cluster size, or one size per cluster (comma list)"},
                       {"baseline", "weibull", "weibull or gompertz"},
                       {"lambda", "", "baseline scale (0.01 Weibull, 0.08 Gompertz)"},
                       {"rho", "1.5", "Weibull shape"},
                       {"alpha", "2", "Gompertz rate"},
                       {"beta", "2,3", "regression coefficients"},
                       {"frailty", "gaussian", "gaussian, correlated or mixture"},
                       {"gamma", "0.7", "Gaussian frailty variance"},
                       {"sigma", "0.8,0.4,0.226", "correlated frailty sigma0^2,sigma1^2,sigma01"},
                       {"censor", "0", "target censoring fraction"},
                       {"covariate-p", "0.5", "Bernoulli covariate probability"},
                       {"seed", "", "random seed (required)"},
                       {"out", "data.csv", "output CSV"},
                       {"frailty-out", "", "optional CSV of the true frailties"}});

  auto* bench = app.add_subcommand("benchmark", "repeat a simulation design and summarise the estimates");
  Settings bench_s(bench, join(kSaemKeys, {{"table", "", "t1..t7"},
                                           {"reps", "100", "repetitions"},
                                           {"seed", "", "base random seed (required)"},
                                           {"jobs", "", "worker threads (default COXFRAIL_JOBS or all cores)"},
                                           {"clusters", "", "override the number of clusters"},
                                           {"algorithms", "", "comma list overriding the design's estimators"},
                                           {"out", "summary.csv", "summary CSV"}}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInput;
  }

  try {
    if (fit->parsed()) {
      fit_s.resolve();
      return cmd_fit(fit_s);
    }
    if (se->parsed()) {
      se_s.resolve();
      return cmd_se(se_s);
    }
    if (sim->parsed()) {
      sim_s.resolve();
      return cmd_simulate(sim_s);
    }
    bench_s.resolve();
    return cmd_benchmark(bench_s);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::InvalidInput: return kInput;
      case ErrorKind::Diverged: return kNotConverged;
      case ErrorKind::Numerical: return kNumerical;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kNumerical;
}
