#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "refocus/env.hpp"
#include "refocus/policy.hpp"
#include "refocus/trajectory.hpp"

namespace refocus {

// Action source for an episode. The context it receives is the flattened
// history so far (any fixed prefix, then s_1 a_1 ... s_t).
using ActionProvider = std::function<TokenSequence(const TokenSequence& context)>;

// Drives one episode to completion and packages the result. context_prefix is
// prepended to every context the provider sees but is not recorded in the
// trajectory turns.
Trajectory run_episode(Environment& env, const std::string& task_id,
                       uint64_t seed, const TokenSequence& context_prefix,
                       const ActionProvider& provider);

DecodingLimits decoding_limits(const World& world);

// Episode sampled from the policy; rng is consumed token by token.
Trajectory policy_rollout(const PolicyParameters& params, const World& world,
                          int task_index, Rng rng,
                          const TokenSequence& context_prefix = {});

struct EvalResult {
  std::vector<std::vector<int>> outcomes;  // [task][run] bits
  double avg_at_k = 0.0;   // mean over all bits
  double best_at_k = 0.0;  // fraction of tasks with at least one success
};

// Aggregation alone, for recounting in tests.
EvalResult aggregate_outcomes(std::vector<std::vector<int>> outcomes);

// k rollouts per task with per-(task, run) derived seeds.
EvalResult evaluate(const PolicyParameters& params, const World& world,
                    const std::vector<int>& tasks, int k, Rng rng);

struct TurnHistogram {
  std::array<long, 3> region_counts{};  // turns 1-3, 4-8, 9+
  std::array<double, 3> region_fractions{};
  std::array<long, 11> per_turn_counts{};  // turns 1..10, then 11+
  std::array<double, 11> per_turn_fractions{};
  long total = 0;
  std::optional<double> mean_step;
};

TurnHistogram target_turn_histogram(const std::vector<int>& steps);

struct PlacementResult {
  long base_rollouts = 0;
  long base_failures = 0;
  double no_feedback_rate = 0.0;
  double start_rate = 0.0;
  double target_rate = 0.0;
  double start_gain = 0.0;          // percentage points vs no-feedback
  double target_gain = 0.0;
  double target_minus_start = 0.0;  // pp
  bool empty = false;               // no failed base rollouts
};

// Where to place one feedback block: for every failed base rollout, rerun
// three arms off one shared derived seed: a fresh no-feedback control, a
// fresh rollout with the feedback ahead of s_1, and a rollout that replays
// the failed prefix a_1..a_{i-1} and inserts the feedback right before the
// target turn. Feedback stays in context for the rest of the episode.
PlacementResult placement_experiment(const PolicyParameters& params,
                                     const World& world, FeedbackSource source,
                                     const std::vector<int>& tasks,
                                     int rollouts_per_task, Rng rng);

// The target-feedback arm alone, exposed for the prefix-identity property.
Trajectory targeted_feedback_rollout(const PolicyParameters& params,
                                     const World& world, int task_index,
                                     const Trajectory& base,
                                     const FeedbackItem& item, Rng rng);

}  // namespace refocus
