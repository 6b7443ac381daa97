#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refocus/config.hpp"
#include "refocus/rng.hpp"
#include "refocus/trajectory.hpp"
#include "refocus/vocab.hpp"

namespace refocus {

// One live episode. Deterministic: identical (task, action sequence) always
// yields identical observations, done flags, and judgement.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual TokenSequence reset() = 0;  // initial observation s_1
  virtual TokenSequence step(const TokenSequence& action, bool* done) = 0;
  virtual bool done() const = 0;
  virtual int judge() const = 0;  // binary; requires done
  // The oracle policy's action for the current state.
  virtual TokenSequence canonical_action() const = 0;
  // Whether step(action) would report OK from the current state. Pure.
  virtual bool accepts(const TokenSequence& action) const = 0;
};

struct CodeLockTokens {
  Token task = -1;
  std::vector<Token> ids;   // observation: task identity, one per task index
  std::vector<Token> pos;   // observation: upcoming turn position
  std::vector<Token> syms;  // action: code symbols
};

struct ToolChainTokens {
  Token task = -1;
  Token need_cred = -1;  // observation: missing/wrong credential reason
  Token bad_order = -1;  // observation: any other wrong call reason
  Token next = -1;       // observation: marker before the displayed next call
  Token done_marker = -1;
  std::vector<Token> logins;  // action: credential-producing calls
  std::vector<Token> acts;    // action: plain calls
  std::vector<Token> creds;   // action: credential tokens the agent must echo
};

// Builds the vocabulary for the configured environment and dispenses
// deterministic task instances. Task seeds are derived from cfg.task_seed.
class World {
 public:
  explicit World(const ExperimentConfig& cfg);

  const Vocab& vocab() const { return vocab_; }
  const ExperimentConfig& config() const { return cfg_; }
  int horizon() const { return cfg_.effective_horizon(); }
  int num_tasks() const { return cfg_.train_tasks + cfg_.eval_tasks; }

  std::vector<int> train_task_indices() const;
  std::vector<int> eval_task_indices() const;  // = train split when eval_tasks == 0

  uint64_t task_instance_seed(int task_index) const;
  std::string task_id(int task_index) const;

  std::unique_ptr<Environment> make_env(int task_index) const;

  const CodeLockTokens& codelock_tokens() const { return cl_; }
  const ToolChainTokens& toolchain_tokens() const { return tc_; }

 private:
  ExperimentConfig cfg_;
  Vocab vocab_;
  CodeLockTokens cl_;
  ToolChainTokens tc_;
};

struct OracleAttribution {
  std::vector<FeedbackItem> items;  // strictly increasing steps
};

// Ground-truth failure attribution via a corrected-replay walk: simulate the
// recorded actions, and wherever the state rejects the recorded action, list
// the step (feedback = the canonical action of the corrected state) and apply
// the canonical action instead. Accepted actions are kept even when they
// differ from canonical, so only genuinely failing decisions are attributed;
// errors that vanish once an earlier listed step is corrected never recur, so
// pure consequences are excluded by construction. Precondition: the
// trajectory failed.
OracleAttribution oracle_attribution(const World& world, int task_index,
                                     const Trajectory& traj);

// The corrective action a feedback block encodes ([<fb> correct-is c... </fb>]
// -> [c..., EOS]).
TokenSequence action_from_feedback(const FeedbackItem& item);

// Replays the trajectory, substituting the implied action at every attributed
// step; returns the replayed trajectory with the judge's verdict.
Trajectory replay_with_corrections(const World& world, int task_index,
                                   const Trajectory& traj,
                                   const OracleAttribution& attribution);

// Replays recorded actions and judges the final state. The trajectory must
// have reached done.
int judge_trajectory(const World& world, int task_index, const Trajectory& traj);

// Episode driven by the environment's own canonical policy (the SFT
// demonstration generator).
Trajectory canonical_rollout(const World& world, int task_index);

}  // namespace refocus
