// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics files: line-delimited JSON. The first line is a header carrying the
// resolved config hash; every following line is one record with step, split,
// language (-1 = aggregate over languages), metric name, value, and the
// checkpoint it was measured on.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtfuse/checkpoint.hpp"
#include "mtfuse/eval.hpp"

namespace mtfuse {

struct MetricRow {
  int step = 0;
  std::string split;  // "train" | "dev" | "test"
  int language = -1;  // -1 = aggregate
  std::string metric;
  double value = 0.0;
  std::string checkpoint_id;
};

inline std::string metrics_header_line(std::uint64_t config_hash) {
  return nlohmann::json{{"config_hash", config_hash}, {"format", "mtfuse-metrics-v1"}}.dump();
}

// Header variant that embeds the full resolved configuration, so a metrics
// file is self-describing without the config file it was produced from.
inline std::string metrics_header_line(std::uint64_t config_hash, const nlohmann::json& resolved_config) {
  return nlohmann::json{{"config", resolved_config}, {"config_hash", config_hash}, {"format", "mtfuse-metrics-v1"}}
      .dump();
}

inline std::string metric_row_line(const MetricRow& r) {
  return nlohmann::json{{"step", r.step},       {"split", r.split}, {"language", r.language},
                        {"metric", r.metric},   {"value", r.value}, {"checkpoint", r.checkpoint_id}}
      .dump();
}

inline MetricRow metric_row_from_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  MetricRow r;
  r.step = j.at("step").get<int>();
  r.split = j.at("split").get<std::string>();
  r.language = j.at("language").get<int>();
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  r.checkpoint_id = j.at("checkpoint").get<std::string>();
  return r;
}

// One row per language plus the aggregate row.
inline std::vector<MetricRow> rows_from_report(const EvalReport& rep, int step, const std::string& split) {
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < rep.languages.size(); ++i) {
    rows.push_back({step, split, rep.languages[i], rep.metric, rep.per_language[i], rep.checkpoint_id});
  }
  rows.push_back({step, split, -1, rep.metric, rep.aggregate, rep.checkpoint_id});
  return rows;
}

inline std::string metrics_file_text(std::uint64_t config_hash, const std::vector<MetricRow>& rows) {
  std::string out = metrics_header_line(config_hash) + "\n";
  for (const auto& r : rows) out += metric_row_line(r) + "\n";
  return out;
}

inline std::string metrics_file_text(std::uint64_t config_hash, const nlohmann::json& resolved_config,
                                     const std::vector<MetricRow>& rows) {
  std::string out = metrics_header_line(config_hash, resolved_config) + "\n";
  for (const auto& r : rows) out += metric_row_line(r) + "\n";
  return out;
}

inline void write_metrics_file(const std::string& path, std::uint64_t config_hash,
                               const std::vector<MetricRow>& rows) {
  write_file_atomic(path, metrics_file_text(config_hash, rows));
}

inline void write_metrics_file(const std::string& path, std::uint64_t config_hash,
                               const nlohmann::json& resolved_config, const std::vector<MetricRow>& rows) {
  write_file_atomic(path, metrics_file_text(config_hash, resolved_config, rows));
}

}  // namespace mtfuse
