#include "refocus/logio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace refocus {
namespace {

using Json = nlohmann::ordered_json;

Json tokens_to_json(const TokenSequence& seq) {
  Json arr = Json::array();
  for (Token t : seq) arr.push_back(t);
  return arr;
}

TokenSequence tokens_from_json(const Json& arr) {
  TokenSequence seq;
  for (const auto& v : arr) seq.push_back(v.get<Token>());
  return seq;
}

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::string trajectory_to_json(const LogRecord& rec, FeedbackSource source,
                               ReportVariant variant) {
  const Trajectory& traj = rec.traj;
  Json j;
  j["schema_version"] = kLogSchemaVersion;
  j["task_id"] = traj.task_id;
  j["seed"] = traj.seed;
  Json turns = Json::array();
  for (const Turn& t : traj.turns) {
    Json turn;
    turn["state"] = tokens_to_json(t.state);
    turn["action"] = tokens_to_json(t.action);
    turns.push_back(std::move(turn));
  }
  j["turns"] = std::move(turns);
  j["reward"] = traj.terminal_reward;
  j["success"] = traj.success;
  Json items = Json::array();
  if (rec.hindsight) {
    for (const FeedbackItem& item : rec.hindsight->items) {
      Json it;
      it["step"] = item.step;
      it["feedback"] = tokens_to_json(item.feedback);
      items.push_back(std::move(it));
    }
    source = rec.hindsight->source;
    variant = rec.hindsight->variant;
  }
  j["hindsight"] = std::move(items);
  j["source"] = to_string(source);
  j["variant"] = to_string(variant);
  return j.dump();
}

std::optional<LogRecord> trajectory_from_json(const std::string& line) {
  Json j = Json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  try {
    if (j.at("schema_version").get<int>() != kLogSchemaVersion)
      return std::nullopt;
    LogRecord rec;
    rec.traj.task_id = j.at("task_id").get<std::string>();
    rec.traj.seed = j.at("seed").get<uint64_t>();
    for (const auto& turn : j.at("turns")) {
      Turn t;
      t.state = tokens_from_json(turn.at("state"));
      t.action = tokens_from_json(turn.at("action"));
      rec.traj.turns.push_back(std::move(t));
    }
    rec.traj.terminal_reward = j.at("reward").get<int>();
    rec.traj.success = j.at("success").get<bool>();
    const auto& items = j.at("hindsight");
    if (!items.empty()) {
      HindsightReport report;
      for (const auto& it : items) {
        FeedbackItem item;
        item.step = it.at("step").get<int>();
        item.feedback = tokens_from_json(it.at("feedback"));
        report.items.push_back(std::move(item));
      }
      auto src = feedback_source_from(j.at("source").get<std::string>());
      auto var = report_variant_from(j.at("variant").get<std::string>());
      if (!src || !var) return std::nullopt;
      report.source = *src;
      report.variant = *var;
      rec.hindsight = std::move(report);
    }
    return rec;
  } catch (const Json::exception&) {
    return std::nullopt;
  }
}

void write_trajectory_log(const std::string& path,
                          const std::vector<LogRecord>& records,
                          FeedbackSource source, ReportVariant variant) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const LogRecord& rec : records)
    out << trajectory_to_json(rec, source, variant) << '\n';
}

std::vector<LogRecord> read_trajectory_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<LogRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = trajectory_from_json(line);
    if (!rec) throw std::runtime_error("bad trajectory record in " + path);
    records.push_back(std::move(*rec));
  }
  return records;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<TrainStepReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,method,avg_at_k,best_at_k,loss,supervised_tokens,spans,"
         "grad_norm,wall_ms,schema_version\n";
  for (const TrainStepReport& r : reports) {
    out << r.epoch << ',' << to_string(r.method) << ','
        << format_double(r.avg_at_k, "%.6f") << ','
        << format_double(r.best_at_k, "%.6f") << ','
        << format_double(r.loss, "%.9g") << ',' << r.supervised_tokens << ','
        << r.spans << ',' << format_double(r.grad_norm, "%.9g") << ','
        << r.wall_ms << ',' << kLogSchemaVersion << '\n';
  }
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  Json j;
  j["schema_version"] = manifest.schema_version;
  j["code_version"] = manifest.code_version;
  j["config_hash"] = manifest.config_hash;
  j["base_seed"] = manifest.base_seed;
  j["created"] = manifest.created;
  j["files"] = manifest.files;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

std::optional<RunManifest> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  Json j = Json::parse(buf.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  try {
    RunManifest m;
    m.schema_version = j.at("schema_version").get<int>();
    m.code_version = j.at("code_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<uint64_t>();
    m.base_seed = j.at("base_seed").get<uint64_t>();
    m.created = j.at("created").get<std::string>();
    m.files = j.at("files").get<std::vector<std::string>>();
    return m;
  } catch (const Json::exception&) {
    return std::nullopt;
  }
}

}  // namespace refocus
