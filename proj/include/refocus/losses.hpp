#pragma once

#include <vector>

#include "refocus/hindsight.hpp"
#include "refocus/policy.hpp"

namespace refocus {

// One supervised token position's contribution, for mask inspection.
struct TokenLoss {
  int traj_index = 0;  // position of the trajectory in the batch argument
  int step = 0;        // 1-based turn
  int pos = 0;         // 0-based token position inside the action
  double value = 0.0;
};

struct LossResult {
  double loss = 0.0;
  PolicyParameters grads;  // student-shaped; zeros when skipped
  long supervised_tokens = 0;
  int spans_used = 0;
  std::vector<TokenLoss> per_token;
  bool skipped = false;  // nothing to train on this batch
};

// Targeted distillation: mean over the selected spans' action-token positions
// of reverse KL between the student distribution (context h_i) and the
// feedback-conditioned teacher distribution (context h_i + f_i). Teacher
// parameters are never registered on the tape, so no gradient can reach them.
LossResult refocus_loss(const PolicyParameters& student,
                        const PolicyParameters& teacher,
                        const std::vector<SupervisionSpan>& spans,
                        const Vocab& vocab);

// Teacher-forced negative log-likelihood over every action token of the
// demonstrations. States are context only.
LossResult sft_loss(const PolicyParameters& student,
                    const std::vector<Trajectory>& demonstrations,
                    const Vocab& vocab);

// Group-relative policy gradient: per task group of G rollouts, advantage
// (r - mean)/population-std, groups with zero std skipped; loss is
// -mean(A * logprob) over action tokens of the surviving groups.
LossResult grpo_loss(const PolicyParameters& student,
                     const std::vector<std::vector<Trajectory>>& groups,
                     const Vocab& vocab);

struct FullTrajExample {
  Trajectory traj;                // failed rollout
  TokenSequence global_feedback;  // all feedback blocks, placed before s_1
};

// Undirected distillation baseline: every action token of the failed
// trajectory is supervised; the teacher reads the global feedback ahead of
// the whole history.
LossResult fulltraj_distill_loss(const PolicyParameters& student,
                                 const PolicyParameters& teacher,
                                 const std::vector<FullTrajExample>& examples,
                                 const Vocab& vocab);

// Dense per-turn baseline: every turn gets a local judge verdict (OK -> +1,
// ERR -> -1; final turn from the terminal reward) and a feedback block in the
// teacher context; the scalar also feeds a policy-gradient term with
// coefficient beta.
LossResult denseturn_distill_loss(const PolicyParameters& student,
                                  const PolicyParameters& teacher,
                                  const std::vector<Trajectory>& failures,
                                  const Vocab& vocab, double beta);

}  // namespace refocus
