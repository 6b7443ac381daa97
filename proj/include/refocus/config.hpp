#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "refocus/trajectory.hpp"

namespace refocus {

enum class EnvId { codelock, toolchain };
enum class Method {
  refocus_single,
  refocus_multi,
  sft,
  grpo,
  fulltraj_distill,
  denseturn_distill
};
enum class TeacherMode { ema, current, initial };
enum class InitScheme { structured, uniform };

std::string to_string(EnvId e);
std::string to_string(Method m);
std::string to_string(TeacherMode t);
std::string to_string(InitScheme s);

// Everything a run needs. The config file is `key = value` lines mirroring
// these fields one to one; parse_config rejects unknown keys and bad values
// with a field-level message.
struct ExperimentConfig {
  // environment
  EnvId env = EnvId::codelock;
  int code_length = 5;     // codelock: L, horizon = L
  int alphabet_size = 8;   // codelock: V_a
  int min_calls = 4;       // toolchain
  int max_calls = 8;       // toolchain
  int max_credentials = 3; // toolchain
  int horizon = 12;        // toolchain only; codelock derives horizon = L
  int act_pool = 10;       // toolchain vocab: plain call tokens
  int login_pool = 4;      // toolchain vocab: credential-producing calls
  int cred_pool = 6;       // toolchain vocab: credential tokens
  int train_tasks = 4;
  int eval_tasks = 0;      // 0 = evaluate on the train split
  uint64_t task_seed = 1000;

  // policy
  int embed_dim = 16;
  int hidden_dim = 32;
  InitScheme init_scheme = InitScheme::structured;
  double init_scale = 0.08;
  double recurrent_decay = 0.7;  // gamma of the structured W_hh init
  double head_gain = 8.0;       // structured head rows = gain * embedding rows
  int max_action_tokens = 0;     // 0 = environment default (2 codelock, 3 toolchain)

  // training
  Method method = Method::refocus_multi;
  int rollouts_per_task = 4;    // G
  int epochs = 15;              // E
  int max_feedback_steps = 3;   // K
  double ema_rate = 0.001;      // eta
  double learning_rate = 3e-3;
  double dense_pg_beta = 0.1;
  FeedbackSource feedback_source = FeedbackSource::oracle;
  TeacherMode teacher_mode = TeacherMode::ema;
  int sft_candidates = 10;
  double sft_feedback_prob = 0.0;  // chance per demo turn of an inline
                                   // correction quote before the action

  // evaluation / run
  int eval_rollouts = 4;  // k of Avg@k / Best@k
  uint64_t base_seed = 0;
  bool record_wall_ms = false;  // true trades byte-reproducible CSVs for timing

  int action_token_limit() const {
    if (max_action_tokens > 0) return max_action_tokens;
    return env == EnvId::codelock ? 2 : 3;
  }
  int effective_horizon() const {
    return env == EnvId::codelock ? code_length : horizon;
  }
};

struct ConfigError {
  std::string field;
  std::string message;
};

// Parses file content. On error returns the offending field and why.
std::optional<ExperimentConfig> parse_config(const std::string& text,
                                             ConfigError* err);
std::optional<ExperimentConfig> load_config(const std::string& path,
                                            ConfigError* err);

// Canonical serialization: fixed key order, one pair per line. Hash and file
// copies both derive from this.
std::string serialize_config(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace refocus
