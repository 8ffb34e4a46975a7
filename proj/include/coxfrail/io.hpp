#pragma once

// Text formats: the clustered survival CSV
//   cluster,time,status,z1..zb[,w1..wf]
// (no w columns means a shared frailty, W = 1), frailty sidecar CSV,
// result.json, trace CSV and flat key = value configuration files.

#include "coxfrail/data_model.hpp"
#include "coxfrail/fisher.hpp"
#include "coxfrail/fit_result.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace coxfrail {

SurvivalDataset read_csv(std::istream& in, const std::string& source = "<input>");
SurvivalDataset read_csv_file(const std::string& path);

// Numbers are written with 17 significant digits, so reading back
// reproduces the dataset exactly.
void write_csv(std::ostream& out, const SurvivalDataset& data);
void write_csv_file(const std::string& path, const SurvivalDataset& data);

void write_frailty_csv(std::ostream& out, const SurvivalDataset& data, const FrailtyState& frailty);

std::string format_double(double v);

nlohmann::ordered_json result_json(const FitResult& res, const FisherEstimate* fisher = nullptr);
void write_json_file(const std::string& path, const nlohmann::ordered_json& doc);

void write_trace_csv(std::ostream& out, const FitResult& res);

// `key = value` per line; blank lines and lines starting with '#' skipped.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>");
KeyValues read_key_value_file(const std::string& path);

}  // namespace coxfrail
