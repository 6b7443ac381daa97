#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refocus/env.hpp"
#include "refocus/eval.hpp"
#include "refocus/losses.hpp"

namespace refocus {

// Adaptive moment estimation with bias correction, no weight decay.
struct AdamState {
  PolicyParameters m;
  PolicyParameters v;
  long t = 0;

  static AdamState init(const PolicyParameters& like);
};

// The default eps is much larger than the textbook 1e-8 on purpose: it acts
// as signal-proportional damping. Coordinates whose gradients are tiny
// (m, sqrt(v) << eps) barely move instead of taking full +-lr steps, which
// keeps the structured initialization's recurrence matrices intact while
// strongly driven coordinates still take near-full steps.
void adam_step(PolicyParameters* params, AdamState* state,
               const PolicyParameters& grads, double lr, double beta1 = 0.9,
               double beta2 = 0.99, double eps = 1e-3);

double global_grad_norm(const PolicyParameters& grads);

// G on-policy rollouts per task, seeds derived per (task position, rollout).
struct RolloutBatch {
  std::vector<int> task_indices;
  std::vector<std::vector<Trajectory>> groups;  // parallel to task_indices

  int total() const;
  int failure_count() const;
};

RolloutBatch collect_rollouts(const PolicyParameters& params, const World& world,
                              const std::vector<int>& tasks, int rollouts_per_task,
                              Rng rng);

struct FailureRef {
  int task_index = 0;
  const Trajectory* traj = nullptr;
};

// Failed rollouts, with exact duplicates within a task group kept once.
std::vector<FailureRef> unique_failures(const RolloutBatch& batch);

struct TrainStepReport {
  int epoch = 0;
  Method method = Method::refocus_multi;
  double loss = 0.0;
  long supervised_tokens = 0;
  int spans = 0;
  double grad_norm = 0.0;
  double avg_at_k = 0.0;
  double best_at_k = 0.0;
  long wall_ms = 0;
  bool skipped = false;  // no parameter update happened this epoch
};

// One trajectory as it goes to the log, with the analyzer output if the
// method produced one for it.
struct LogRecord {
  Trajectory traj;
  std::optional<HindsightReport> hindsight;
};

struct TrainResult {
  PolicyParameters best;     // checkpoint with the highest eval average
  PolicyParameters final_params;
  PolicyParameters teacher;  // EMA parameters at exit
  std::vector<TrainStepReport> reports;
  std::vector<LogRecord> log;
  int best_epoch = 0;  // 0 = initial parameters never improved on
  double best_avg = -1.0;
  double best_best = 0.0;
  bool diverged = false;
  std::string divergence_note;
};

// The epoch loop: collect rollouts, build the configured method's loss over
// the failures (SFT trains on oracle demonstrations, GRPO on all rollouts),
// take one optimizer step, advance the EMA teacher, evaluate, and keep the
// best checkpoint by eval average. Non-finite loss or gradients stop the run
// with diverged set.
TrainResult train(const ExperimentConfig& cfg);

struct AblationRow {
  std::string label;
  double avg_at_k = 0.0;
  double best_at_k = 0.0;
};

// Identical pipelines except the feedback source / teacher parameters:
// oracle feedback + EMA teacher, raw environment feedback + EMA teacher, and
// oracle feedback + frozen initial teacher.
std::vector<AblationRow> source_ablation(const ExperimentConfig& cfg);

}  // namespace refocus
