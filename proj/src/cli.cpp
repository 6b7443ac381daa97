#include "refocus/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

#include "refocus/logio.hpp"
#include "refocus/train.hpp"

namespace refocus {
namespace {

namespace fs = std::filesystem;

// REFOCUS_SEED and REFOCUS_OUT_DIR are the only environment overrides; all
// other settings come from the config file.
bool apply_seed_override(ExperimentConfig* cfg) {
  const char* raw = std::getenv("REFOCUS_SEED");
  if (raw == nullptr) return true;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (end == raw || *end != '\0') {
    std::fprintf(stderr, "REFOCUS_SEED is not an unsigned integer: %s\n", raw);
    return false;
  }
  cfg->base_seed = v;
  return true;
}

std::string resolve_out_dir(const std::string& out_dir) {
  const char* raw = std::getenv("REFOCUS_OUT_DIR");
  return raw != nullptr && *raw != '\0' ? std::string(raw) : out_dir;
}

std::optional<ExperimentConfig> load_config_or_report(const std::string& path) {
  ConfigError err;
  auto cfg = load_config(path, &err);
  if (!cfg)
    std::fprintf(stderr, "config error [%s]: %s\n", err.field.c_str(),
                 err.message.c_str());
  return cfg;
}

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void add_manifest_file(const std::string& dir, const std::string& name) {
  const std::string path = dir + "/manifest.json";
  auto manifest = read_manifest(path);
  if (!manifest) return;
  for (const std::string& f : manifest->files)
    if (f == name) return;
  manifest->files.push_back(name);
  write_manifest(path, *manifest);
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  auto cfg = load_config_or_report(config_path);
  if (!cfg) return kExitBadInput;
  if (!apply_seed_override(&*cfg)) return kExitBadInput;

  const std::string dir = resolve_out_dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    std::fprintf(stderr, "cannot create output directory %s: %s\n", dir.c_str(),
                 ec.message().c_str());
    return kExitBadInput;
  }

  TrainResult res = train(*cfg);

  RunManifest manifest;
  manifest.config_hash = config_hash(*cfg);
  manifest.base_seed = cfg->base_seed;
  if (cfg->record_wall_ms) manifest.created = timestamp_utc();

  {
    std::ofstream out(dir + "/config.txt", std::ios::trunc);
    out << serialize_config(*cfg);
  }
  manifest.files.push_back("config.txt");
  write_metrics_csv(dir + "/metrics.csv", res.reports);
  manifest.files.push_back("metrics.csv");
  const ReportVariant variant = cfg->method == Method::refocus_single
                                    ? ReportVariant::single
                                    : ReportVariant::multi;
  write_trajectory_log(dir + "/trajectories.jsonl", res.log,
                       cfg->feedback_source, variant);
  manifest.files.push_back("trajectories.jsonl");

  if (res.diverged) {
    std::ofstream out(dir + "/divergence.txt", std::ios::trunc);
    out << res.divergence_note << '\n';
    manifest.files.push_back("divergence.txt");
    write_manifest(dir + "/manifest.json", manifest);
    std::fprintf(stderr, "training diverged: %s\n", res.divergence_note.c_str());
    return kExitDiverged;
  }

  if (!save_checkpoint(dir + "/checkpoint.bin", res.best, config_hash(*cfg))) {
    std::fprintf(stderr, "cannot write checkpoint into %s\n", dir.c_str());
    return kExitBadInput;
  }
  manifest.files.push_back("checkpoint.bin");
  write_manifest(dir + "/manifest.json", manifest);

  std::printf("epochs=%zu best_epoch=%d best_avg=%.6f best_best=%.6f\n",
              res.reports.size(), res.best_epoch,
              res.best_avg < 0 ? 0.0 : res.best_avg, res.best_best);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             int k) {
  auto cfg = load_config_or_report(config_path);
  if (!cfg) return kExitBadInput;
  if (!apply_seed_override(&*cfg)) return kExitBadInput;
  if (k < 1) {
    std::fprintf(stderr, "k must be >= 1\n");
    return kExitBadInput;
  }
  uint64_t stored_hash = 0;
  auto params = load_checkpoint(checkpoint_path, &stored_hash);
  if (!params) {
    std::fprintf(stderr, "missing or corrupt checkpoint: %s\n",
                 checkpoint_path.c_str());
    return kExitBadInput;
  }
  World world(*cfg);
  if (params->vocab_size() != world.vocab().size()) {
    std::fprintf(stderr,
                 "checkpoint vocabulary (%d) does not match the config (%d)\n",
                 params->vocab_size(), world.vocab().size());
    return kExitBadInput;
  }
  if (stored_hash != config_hash(*cfg))
    std::fprintf(stderr,
                 "note: checkpoint was trained under a different config\n");

  EvalResult res = evaluate(*params, world, world.eval_task_indices(), k,
                            Rng(cfg->base_seed).derive(3));

  const std::string csv_path = checkpoint_path + ".eval.csv";
  std::ofstream out(csv_path, std::ios::trunc);
  out << "task_id,run,outcome\n";
  const std::vector<int> tasks = world.eval_task_indices();
  for (size_t ti = 0; ti < res.outcomes.size(); ++ti)
    for (size_t run = 0; run < res.outcomes[ti].size(); ++run)
      out << world.task_id(tasks[ti]) << ',' << run << ','
          << res.outcomes[ti][run] << '\n';

  std::printf("avg_at_%d=%.6f best_at_%d=%.6f\n", k, res.avg_at_k, k,
              res.best_at_k);
  return kExitOk;
}

namespace {

int analyze_turns(const std::string& dir) {
  std::vector<LogRecord> records;
  try {
    records = read_trajectory_log(dir + "/trajectories.jsonl");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitBadInput;
  }
  std::vector<int> steps;
  for (const LogRecord& rec : records)
    if (rec.hindsight)
      for (const FeedbackItem& item : rec.hindsight->items)
        steps.push_back(item.step);

  TurnHistogram h = target_turn_histogram(steps);
  std::ofstream out(dir + "/analysis_turns.csv", std::ios::trunc);
  out << "bucket,count,value\n";
  const char* regions[3] = {"region:1-3", "region:4-8", "region:9+"};
  for (int i = 0; i < 3; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s,%ld,%.6f", regions[i], h.region_counts[i],
                  h.region_fractions[i]);
    out << buf << '\n';
  }
  for (int i = 0; i < 11; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "turn:%s,%ld,%.6f",
                  i < 10 ? std::to_string(i + 1).c_str() : "11+",
                  h.per_turn_counts[i], h.per_turn_fractions[i]);
    out << buf << '\n';
  }
  out << "mean_step," << h.total << ',';
  if (h.mean_step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *h.mean_step);
    out << buf;
  }
  out << '\n';
  add_manifest_file(dir, "analysis_turns.csv");

  std::printf("targets: 1-3 %.1f%% | 4-8 %.1f%% | 9+ %.1f%%",
              100.0 * h.region_fractions[0], 100.0 * h.region_fractions[1],
              100.0 * h.region_fractions[2]);
  if (h.mean_step)
    std::printf(" | mean target turn %.2f", *h.mean_step);
  std::printf(" (n=%ld)\n", h.total);
  return kExitOk;
}

int analyze_placement(const std::string& dir, const ExperimentConfig& cfg) {
  uint64_t hash = 0;
  auto params = load_checkpoint(dir + "/checkpoint.bin", &hash);
  if (!params) {
    std::fprintf(stderr, "missing or corrupt checkpoint in %s\n", dir.c_str());
    return kExitBadInput;
  }
  World world(cfg);
  PlacementResult res = placement_experiment(
      *params, world, cfg.feedback_source, world.eval_task_indices(),
      cfg.rollouts_per_task, Rng(cfg.base_seed).derive(4));

  std::ofstream out(dir + "/analysis_placement.csv", std::ios::trunc);
  out << "base_rollouts,base_failures,no_feedback_rate,start_rate,target_rate,"
         "start_gain,target_gain,target_minus_start\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.6f,%.6f,%.6f,%.2f,%.2f,%.2f",
                res.base_rollouts, res.base_failures, res.no_feedback_rate,
                res.start_rate, res.target_rate, res.start_gain,
                res.target_gain, res.target_minus_start);
  out << buf << '\n';
  add_manifest_file(dir, "analysis_placement.csv");

  if (res.empty) {
    std::printf("no failed base rollouts; nothing to place feedback into\n");
    return kExitOk;
  }
  std::printf(
      "start_gain=%+.2fpp target_gain=%+.2fpp target-start=%+.2fpp "
      "(failures=%ld)\n",
      res.start_gain, res.target_gain, res.target_minus_start,
      res.base_failures);
  return kExitOk;
}

int analyze_sources(const std::string& dir, const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows = source_ablation(cfg);
  std::ofstream out(dir + "/analysis_sources.csv", std::ios::trunc);
  out << "source,avg_at_k,best_at_k\n";
  for (const AblationRow& row : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f", row.label.c_str(),
                  row.avg_at_k, row.best_at_k);
    out << buf << '\n';
  }
  add_manifest_file(dir, "analysis_sources.csv");
  for (const AblationRow& row : rows)
    std::printf("%-16s avg_at_k=%.6f best_at_k=%.6f\n", row.label.c_str(),
                row.avg_at_k, row.best_at_k);
  return kExitOk;
}

}  // namespace

int cmd_analyze(const std::string& logs_dir, const std::string& kind) {
  auto cfg = load_config_or_report(logs_dir + "/config.txt");
  if (!cfg) return kExitBadInput;
  if (!apply_seed_override(&*cfg)) return kExitBadInput;

  if (kind == "turns") return analyze_turns(logs_dir);
  if (kind == "placement") return analyze_placement(logs_dir, *cfg);
  if (kind == "sources") return analyze_sources(logs_dir, *cfg);
  std::fprintf(stderr, "unknown analysis kind: %s\n", kind.c_str());
  return kExitBadInput;
}

}  // namespace refocus
