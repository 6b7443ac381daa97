#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refocus/train.hpp"

namespace refocus {

constexpr int kLogSchemaVersion = 1;
constexpr const char* kCodeVersion = "0.1.0";

// One trajectory as one JSON line. source/variant describe the analyzer
// configuration of the run; records that carry a hindsight report embed the
// report's own source/variant instead.
std::string trajectory_to_json(const LogRecord& rec, FeedbackSource source,
                               ReportVariant variant);
std::optional<LogRecord> trajectory_from_json(const std::string& line);

void write_trajectory_log(const std::string& path,
                          const std::vector<LogRecord>& records,
                          FeedbackSource source, ReportVariant variant);
std::vector<LogRecord> read_trajectory_log(const std::string& path);

// Per-epoch metrics. Header:
// epoch,method,avg_at_k,best_at_k,loss,supervised_tokens,spans,grad_norm,wall_ms,schema_version
void write_metrics_csv(const std::string& path,
                       const std::vector<TrainStepReport>& reports);

struct RunManifest {
  int schema_version = kLogSchemaVersion;
  std::string code_version = kCodeVersion;
  uint64_t config_hash = 0;
  uint64_t base_seed = 0;
  std::string created;  // empty when the run is configured for byte-stable output
  std::vector<std::string> files;  // everything this run wrote, relative paths
};

void write_manifest(const std::string& path, const RunManifest& manifest);
std::optional<RunManifest> read_manifest(const std::string& path);

}  // namespace refocus
