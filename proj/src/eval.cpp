#include "refocus/eval.hpp"

#include <stdexcept>
#include <utility>

#include "refocus/hindsight.hpp"

namespace refocus {

Trajectory run_episode(Environment& env, const std::string& task_id,
                       uint64_t seed, const TokenSequence& context_prefix,
                       const ActionProvider& provider) {
  Trajectory traj;
  traj.task_id = task_id;
  traj.seed = seed;
  TokenSequence context = context_prefix;
  TokenSequence obs = env.reset();
  bool done = false;
  while (!done) {
    context.insert(context.end(), obs.begin(), obs.end());
    TokenSequence action = provider(context);
    context.insert(context.end(), action.begin(), action.end());
    TokenSequence next_obs = env.step(action, &done);
    traj.turns.push_back(Turn{std::move(obs), std::move(action)});
    obs = std::move(next_obs);
  }
  traj.terminal_reward = env.judge();
  traj.success = traj.terminal_reward == 1;
  return traj;
}

DecodingLimits decoding_limits(const World& world) {
  DecodingLimits limits;
  limits.max_action_tokens = world.config().action_token_limit();
  return limits;
}

Trajectory policy_rollout(const PolicyParameters& params, const World& world,
                          int task_index, Rng rng,
                          const TokenSequence& context_prefix) {
  auto env = world.make_env(task_index);
  const DecodingLimits limits = decoding_limits(world);
  const uint64_t seed = rng.state();
  return run_episode(*env, world.task_id(task_index), seed, context_prefix,
                     [&](const TokenSequence& context) {
                       return sample_action(params, world.vocab(), context,
                                            limits, &rng);
                     });
}

EvalResult aggregate_outcomes(std::vector<std::vector<int>> outcomes) {
  EvalResult res;
  res.outcomes = std::move(outcomes);
  long bits = 0, ones = 0, tasks_with_success = 0;
  for (const auto& row : res.outcomes) {
    bool any = false;
    for (int bit : row) {
      ++bits;
      ones += bit;
      any = any || bit == 1;
    }
    if (any) ++tasks_with_success;
  }
  if (bits == 0) throw std::invalid_argument("aggregate_outcomes: no outcomes");
  res.avg_at_k = static_cast<double>(ones) / static_cast<double>(bits);
  res.best_at_k = static_cast<double>(tasks_with_success) /
                  static_cast<double>(res.outcomes.size());
  return res;
}

EvalResult evaluate(const PolicyParameters& params, const World& world,
                    const std::vector<int>& tasks, int k, Rng rng) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
  if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
  std::vector<std::vector<int>> outcomes(tasks.size(), std::vector<int>(k, 0));
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    Rng task_rng = rng.derive(ti);
    for (int run = 0; run < k; ++run) {
      Trajectory traj =
          policy_rollout(params, world, tasks[ti], task_rng.derive(run));
      outcomes[ti][run] = traj.terminal_reward;
    }
  }
  return aggregate_outcomes(std::move(outcomes));
}

TurnHistogram target_turn_histogram(const std::vector<int>& steps) {
  TurnHistogram h;
  double sum = 0.0;
  for (int s : steps) {
    if (s < 1) throw std::invalid_argument("target_turn_histogram: step < 1");
    if (s <= 3)
      ++h.region_counts[0];
    else if (s <= 8)
      ++h.region_counts[1];
    else
      ++h.region_counts[2];
    ++h.per_turn_counts[s <= 10 ? s - 1 : 10];
    sum += s;
    ++h.total;
  }
  if (h.total > 0) {
    h.mean_step = sum / static_cast<double>(h.total);
    for (int i = 0; i < 3; ++i)
      h.region_fractions[i] =
          static_cast<double>(h.region_counts[i]) / static_cast<double>(h.total);
    for (int i = 0; i < 11; ++i)
      h.per_turn_fractions[i] = static_cast<double>(h.per_turn_counts[i]) /
                                static_cast<double>(h.total);
  }
  return h;
}

Trajectory targeted_feedback_rollout(const PolicyParameters& params,
                                     const World& world, int task_index,
                                     const Trajectory& base,
                                     const FeedbackItem& item, Rng rng) {
  if (item.step < 1 || item.step > base.length())
    throw std::out_of_range("targeted_feedback_rollout: step outside base");
  auto env = world.make_env(task_index);
  const DecodingLimits limits = decoding_limits(world);

  Trajectory traj;
  traj.task_id = base.task_id;
  traj.seed = rng.state();
  TokenSequence context;
  TokenSequence obs = env->reset();
  bool done = false;
  // replay the recorded prefix exactly
  for (int t = 1; t < item.step; ++t) {
    if (done)
      throw std::logic_error("targeted_feedback_rollout: prefix ended early");
    const TokenSequence& action = base.turns[t - 1].action;
    context.insert(context.end(), obs.begin(), obs.end());
    context.insert(context.end(), action.begin(), action.end());
    TokenSequence next_obs = env->step(action, &done);
    traj.turns.push_back(Turn{std::move(obs), action});
    obs = std::move(next_obs);
  }
  if (done)
    throw std::logic_error("targeted_feedback_rollout: prefix ended early");
  // feedback sits right before the target action and persists from here on
  context.insert(context.end(), obs.begin(), obs.end());
  context.insert(context.end(), item.feedback.begin(), item.feedback.end());
  while (!done) {
    TokenSequence action = sample_action(params, world.vocab(), context, limits, &rng);
    context.insert(context.end(), action.begin(), action.end());
    TokenSequence next_obs = env->step(action, &done);
    traj.turns.push_back(Turn{std::move(obs), std::move(action)});
    obs = std::move(next_obs);
    if (!done) context.insert(context.end(), obs.begin(), obs.end());
  }
  traj.terminal_reward = env->judge();
  traj.success = traj.terminal_reward == 1;
  return traj;
}

PlacementResult placement_experiment(const PolicyParameters& params,
                                     const World& world, FeedbackSource source,
                                     const std::vector<int>& tasks,
                                     int rollouts_per_task, Rng rng) {
  if (tasks.empty())
    throw std::invalid_argument("placement_experiment: empty task set");
  if (rollouts_per_task < 1)
    throw std::invalid_argument("placement_experiment: rollouts_per_task < 1");

  PlacementResult res;
  long nofb_hits = 0, start_hits = 0, target_hits = 0;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    Rng task_rng = rng.derive(ti);
    for (int g = 0; g < rollouts_per_task; ++g) {
      Rng pair_rng = task_rng.derive(g);
      Trajectory base =
          policy_rollout(params, world, tasks[ti], pair_rng.derive(0));
      ++res.base_rollouts;
      if (base.success) continue;
      ++res.base_failures;

      HindsightReport report = analyze(world, tasks[ti], base, source,
                                       ReportVariant::single, 1);
      const FeedbackItem& item = report.items[0];
      // one shared seed so the three arms are sampling-paired
      Rng arm_rng = pair_rng.derive(1);

      Trajectory nofb = policy_rollout(params, world, tasks[ti], arm_rng);
      Trajectory start =
          policy_rollout(params, world, tasks[ti], arm_rng, item.feedback);
      Trajectory target = targeted_feedback_rollout(params, world, tasks[ti],
                                                    base, item, arm_rng);
      nofb_hits += nofb.terminal_reward;
      start_hits += start.terminal_reward;
      target_hits += target.terminal_reward;
    }
  }

  if (res.base_failures == 0) {
    res.empty = true;
    return res;
  }
  const double n = static_cast<double>(res.base_failures);
  res.no_feedback_rate = nofb_hits / n;
  res.start_rate = start_hits / n;
  res.target_rate = target_hits / n;
  res.start_gain = (res.start_rate - res.no_feedback_rate) * 100.0;
  res.target_gain = (res.target_rate - res.no_feedback_rate) * 100.0;
  res.target_minus_start = res.target_gain - res.start_gain;
  return res;
}

}  // namespace refocus
