#pragma once

#include <string>

namespace refocus {

constexpr int kExitOk = 0;
constexpr int kExitBadInput = 2;  // unreadable/invalid config, missing files
constexpr int kExitDiverged = 3;  // non-finite loss or parameters

// `train --config PATH --out DIR`. Writes manifest.json, config.txt,
// metrics.csv, trajectories.jsonl, checkpoint.bin into DIR.
// REFOCUS_OUT_DIR overrides DIR; REFOCUS_SEED overrides the config seed.
int cmd_train(const std::string& config_path, const std::string& out_dir);

// `eval --checkpoint PATH --config PATH --k INT`. Prints Avg@k / Best@k and
// writes the outcome matrix next to the checkpoint.
int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             int k);

// `analyze --logs DIR --kind {turns|placement|sources}` over a train run
// directory; writes analysis_<kind>.csv into it and prints the headline.
int cmd_analyze(const std::string& logs_dir, const std::string& kind);

}  // namespace refocus
