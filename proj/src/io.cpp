#include "coxfrail/io.hpp"

#include "coxfrail/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace coxfrail {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw_input(source + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, const std::string& source, std::size_t line, const std::string& column) {
  if (s.empty()) fail(source, line, "empty value in column '" + column + "'");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    fail(source, line, "cannot parse '" + s + "' in column '" + column + "' as a number");
  return v;
}

// Index of column `prefix` + k for k = 1, 2, ... until one is missing.
std::vector<std::size_t> numbered_columns(const std::map<std::string, std::size_t>& cols, const std::string& prefix) {
  std::vector<std::size_t> out;
  for (std::size_t k = 1;; ++k) {
    auto it = cols.find(prefix + std::to_string(k));
    if (it == cols.end()) break;
    out.push_back(it->second);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_input("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

SurvivalDataset read_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) fail(source, lineno, "empty input, expected a header");

  std::map<std::string, std::size_t> cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!cols.emplace(header[c], c).second) fail(source, lineno, "duplicate column '" + header[c] + "'");
  }
  for (const char* required : {"cluster", "time", "status"}) {
    if (!cols.count(required)) fail(source, lineno, std::string("missing column '") + required + "'");
  }
  const auto zc = numbered_columns(cols, "z");
  const auto wc = numbered_columns(cols, "w");
  if (3 + zc.size() + wc.size() != header.size()) {
    for (const auto& h : header) {
      const bool known = h == "cluster" || h == "time" || h == "status" ||
                         std::find_if(zc.begin(), zc.end(), [&](std::size_t i) { return header[i] == h; }) != zc.end() ||
                         std::find_if(wc.begin(), wc.end(), [&](std::size_t i) { return header[i] == h; }) != wc.end();
      if (!known) fail(source, lineno, "unexpected column '" + h + "'");
    }
  }
  const std::size_t ci = cols["cluster"], ti = cols["time"], si = cols["status"];

  std::vector<Cluster> clusters;
  std::unordered_map<std::string, std::size_t> by_id;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size())
      fail(source, lineno, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    Individual ind;
    if (f[ci].empty()) fail(source, lineno, "empty value in column 'cluster'");
    ind.time = parse_double(f[ti], source, lineno, "time");
    if (!std::isfinite(ind.time) || !(ind.time > 0.0)) fail(source, lineno, "time must be finite and positive");
    if (f[si] == "1") {
      ind.status = 1;
    } else if (f[si] == "0") {
      ind.status = 0;
    } else {
      fail(source, lineno, "status must be 0 or 1, found '" + f[si] + "'");
    }
    ind.z.resize(static_cast<Eigen::Index>(zc.size()));
    for (std::size_t k = 0; k < zc.size(); ++k) {
      ind.z(static_cast<Eigen::Index>(k)) = parse_double(f[zc[k]], source, lineno, header[zc[k]]);
      if (!std::isfinite(ind.z(static_cast<Eigen::Index>(k)))) fail(source, lineno, "covariates must be finite");
    }
    if (wc.empty()) {
      ind.w = Vector::Ones(1);
    } else {
      ind.w.resize(static_cast<Eigen::Index>(wc.size()));
      for (std::size_t k = 0; k < wc.size(); ++k) {
        ind.w(static_cast<Eigen::Index>(k)) = parse_double(f[wc[k]], source, lineno, header[wc[k]]);
        if (!std::isfinite(ind.w(static_cast<Eigen::Index>(k)))) fail(source, lineno, "covariates must be finite");
      }
    }
    auto [it, inserted] = by_id.emplace(f[ci], clusters.size());
    if (inserted) clusters.push_back(Cluster{f[ci], {}});
    clusters[it->second].individuals.push_back(std::move(ind));
  }
  if (clusters.empty()) fail(source, lineno, "no data rows");
  return SurvivalDataset(std::move(clusters));
}

SurvivalDataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_input("cannot open '" + path + "'");
  return read_csv(in, path);
}

void write_csv(std::ostream& out, const SurvivalDataset& data) {
  const Eigen::Index nb = data.n_fixed();
  const Eigen::Index f = data.n_frailty();
  bool shared = f == 1;
  for (std::size_t j = 0; shared && j < data.n_individuals(); ++j)
    shared = data.w()(static_cast<Eigen::Index>(j), 0) == 1.0;
  out << "cluster,time,status";
  for (Eigen::Index k = 1; k <= nb; ++k) out << ",z" << k;
  if (!shared)
    for (Eigen::Index k = 1; k <= f; ++k) out << ",w" << k;
  out << '\n';
  for (std::size_t i = 0; i < data.n_clusters(); ++i) {
    for (std::size_t j = data.cluster_begin(i); j < data.cluster_end(i); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out << data.clusters()[i].id << ',' << format_double(data.time(j)) << ',' << data.status(j);
      for (Eigen::Index k = 0; k < nb; ++k) out << ',' << format_double(data.z()(jj, k));
      if (!shared)
        for (Eigen::Index k = 0; k < f; ++k) out << ',' << format_double(data.w()(jj, k));
      out << '\n';
    }
  }
}

void write_csv_file(const std::string& path, const SurvivalDataset& data) {
  auto out = open_out(path);
  write_csv(out, data);
  if (!out) throw_input("failed writing '" + path + "'");
}

void write_frailty_csv(std::ostream& out, const SurvivalDataset& data, const FrailtyState& frailty) {
  if (frailty.n_clusters() != data.n_clusters()) throw_input("frailty state does not match the dataset");
  out << "cluster";
  for (Eigen::Index a = 1; a <= frailty.b.cols(); ++a) out << ",b" << a;
  out << '\n';
  for (std::size_t i = 0; i < data.n_clusters(); ++i) {
    out << data.clusters()[i].id;
    for (Eigen::Index a = 0; a < frailty.b.cols(); ++a) out << ',' << format_double(frailty.b(static_cast<Eigen::Index>(i), a));
    out << '\n';
  }
}

nlohmann::ordered_json result_json(const FitResult& res, const FisherEstimate* fisher) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["algorithm"] = res.algorithm;
  ordered_json est = ordered_json::object();
  for (std::size_t k = 0; k < res.param_names.size(); ++k)
    est[res.param_names[k]] = res.estimate(static_cast<Eigen::Index>(k));
  doc["estimates"] = est;
  if (res.se) {
    const auto names = res.theta_hat.names();
    ordered_json se = ordered_json::object();
    for (std::size_t k = 0; k < names.size(); ++k) se[names[k]] = (*res.se)(static_cast<Eigen::Index>(k));
    doc["se"] = se;
  } else {
    doc["se"] = nullptr;
  }
  doc["converged"] = res.converged;
  doc["iterations"] = res.iterations;
  doc["seed"] = res.seed;
  ordered_json diag;
  diag["accept_rate"] = res.diagnostics.accept_rate;
  diag["mh_steps"] = res.diagnostics.steps;
  diag["proposal_sd"] = std::vector<double>(res.proposal_sd.data(), res.proposal_sd.data() + res.proposal_sd.size());
  diag["spd_projected"] = res.spd_projected;
  if (res.algorithm == "algorithm2") diag["restarts"] = res.restarts;
  if (fisher) {
    diag["fisher_M"] = fisher->M;
    diag["fisher_burn_in"] = fisher->burn_in;
    diag["fisher_condition_number"] = std::isfinite(fisher->condition_number) ? ordered_json(fisher->condition_number)
                                                                              : ordered_json(nullptr);
    diag["fisher_min_eigenvalue"] = fisher->min_eigenvalue;
  }
  doc["diagnostics"] = diag;
  return doc;
}

void write_json_file(const std::string& path, const nlohmann::ordered_json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw_input("failed writing '" + path + "'");
}

void write_trace_csv(std::ostream& out, const FitResult& res) {
  const bool truncation = !res.trace.empty() && res.trace.front().has_truncation;
  out << "iteration";
  for (const auto& n : res.param_names) out << ',' << n;
  out << ",accept_rate,mu";
  if (truncation) out << ",kappa,restart,jump,eps";
  out << '\n';
  for (const auto& row : res.trace) {
    out << row.iteration;
    for (Eigen::Index k = 0; k < row.theta.size(); ++k) out << ',' << format_double(row.theta(k));
    out << ',' << format_double(row.accept_rate) << ',' << format_double(row.mu);
    if (truncation)
      out << ',' << row.kappa << ',' << (row.restart ? 1 : 0) << ',' << format_double(row.jump) << ','
          << format_double(row.eps);
    out << '\n';
  }
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(source, lineno, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) fail(source, lineno, "empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_input("cannot open '" + path + "'");
  return parse_key_values(in, path);
}

}  // namespace coxfrail
