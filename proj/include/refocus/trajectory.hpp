#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refocus/vocab.hpp"

namespace refocus {

// One (s_t, a_t) pair. Steps are 1-based everywhere in this codebase.
struct Turn {
  TokenSequence state;   // environment observation, may be empty only at t=1
  TokenSequence action;  // non-empty, terminated by Vocab::kEos
};

struct Trajectory {
  std::string task_id;
  uint64_t seed = 0;  // rollout seed the sampler consumed
  std::vector<Turn> turns;
  int terminal_reward = 0;  // binary, judge-produced
  bool success = false;     // success <=> terminal_reward == 1

  int length() const { return static_cast<int>(turns.size()); }
};

// Corrective feedback f_i for step i, wrapped in <fb> ... </fb>.
struct FeedbackItem {
  int step = 0;
  TokenSequence feedback;
};

enum class FeedbackSource { oracle, heuristic, environment };
enum class ReportVariant { single, multi };

std::string to_string(FeedbackSource s);
std::string to_string(ReportVariant v);
std::optional<FeedbackSource> feedback_source_from(const std::string& s);
std::optional<ReportVariant> report_variant_from(const std::string& s);

// Analyzer output: at most K failure-relevant steps, strictly increasing.
struct HindsightReport {
  std::vector<FeedbackItem> items;
  FeedbackSource source = FeedbackSource::oracle;
  ReportVariant variant = ReportVariant::multi;
};

// h_i = s_1 + a_1 + ... + a_{i-1} + s_i, optionally followed by the feedback
// block. The teacher context is the student context plus one contiguous
// block, nothing else.
TokenSequence flatten_context(const Trajectory& traj, int step,
                              const FeedbackItem* feedback = nullptr);

// True iff the report satisfies every HindsightReport invariant against the
// trajectory horizon and the step budget K. Never throws.
bool validate_report(const HindsightReport& report, const Trajectory& traj,
                     int max_steps, const Vocab& vocab);

}  // namespace refocus
