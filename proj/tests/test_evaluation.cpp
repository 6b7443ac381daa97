#include <doctest.h>

#include <vector>

#include "refocus/eval.hpp"
#include "refocus/hindsight.hpp"

using namespace refocus;

namespace {

ExperimentConfig small_codelock(int tasks) {
  ExperimentConfig cfg;
  cfg.env = EnvId::codelock;
  cfg.code_length = 3;
  cfg.alphabet_size = 2;
  cfg.train_tasks = tasks;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 16;
  cfg.init_scale = 0.4;
  cfg.recurrent_decay = 0.25;
  cfg.head_gain = 4.0;
  return cfg;
}

// Hand-wired policy that always plays the single-symbol codelock perfectly:
// one-hot embeddings, pass-through recurrence, and a head that fires the
// symbol after the position marker and EOS after the symbol. The winning
// logit margin (~76) makes the sampled action deterministic in practice.
PolicyParameters perfect_single_symbol_policy(const World& world) {
  const int v = world.vocab().size();
  PolicyParameters p = PolicyParameters::zeros(v, v, v);
  for (int r = 0; r < v; ++r) {
    p.embed.at(r, r) = 1.0;
    p.w_xh.at(r, r) = 1.0;
  }
  const Token sym = world.codelock_tokens().syms[0];
  const Token pos0 = world.codelock_tokens().pos[0];
  p.w_hy.at(static_cast<size_t>(sym), static_cast<size_t>(pos0)) = 100.0;
  p.w_hy.at(static_cast<size_t>(Vocab::kEos), static_cast<size_t>(sym)) = 100.0;
  return p;
}

bool same_turns(const Trajectory& a, const Trajectory& b, size_t upto) {
  for (size_t i = 0; i < upto; ++i) {
    if (a.turns[i].state != b.turns[i].state) return false;
    if (a.turns[i].action != b.turns[i].action) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("aggregate_outcomes computes Avg@k and Best@k") {
  EvalResult res = aggregate_outcomes({{1, 0}, {0, 0}});
  CHECK(res.avg_at_k == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(res.best_at_k == doctest::Approx(0.5).epsilon(1e-12));

  res = aggregate_outcomes({{1, 0, 0, 1}});
  CHECK(res.avg_at_k == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.best_at_k == doctest::Approx(1.0).epsilon(1e-12));

  res = aggregate_outcomes({{0}, {0}});
  CHECK(res.avg_at_k == 0.0);
  CHECK(res.best_at_k == 0.0);

  // ragged rows still mean over bits and over tasks respectively
  res = aggregate_outcomes({{1}, {0, 0, 1}});
  CHECK(res.avg_at_k == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.best_at_k == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS(aggregate_outcomes({}));
  CHECK_THROWS(aggregate_outcomes({{}, {}}));
}

TEST_CASE("best_at_k matches its definition on random outcome grids") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<int>> grid(3 + rng.uniform_int(4));
    for (auto& row : grid) {
      row.resize(1 + rng.uniform_int(5));
      for (int& bit : row) bit = static_cast<int>(rng.uniform_int(2));
    }
    EvalResult res = aggregate_outcomes(grid);
    long bits = 0, ones = 0, any_rows = 0;
    for (const auto& row : grid) {
      bool any = false;
      for (int b : row) {
        ++bits;
        ones += b;
        any = any || b == 1;
      }
      any_rows += any ? 1 : 0;
    }
    CHECK(res.avg_at_k ==
          doctest::Approx(double(ones) / double(bits)).epsilon(1e-12));
    CHECK(res.best_at_k ==
          doctest::Approx(double(any_rows) / double(grid.size())).epsilon(1e-12));
  }
}

TEST_CASE("evaluate is deterministic and consistent with its own outcomes") {
  ExperimentConfig cfg = small_codelock(4);
  World world(cfg);
  PolicyParameters p = init_policy(world.vocab(), cfg, Rng(3));
  std::vector<int> tasks = world.eval_task_indices();

  EvalResult a = evaluate(p, world, tasks, 3, Rng(50));
  EvalResult b = evaluate(p, world, tasks, 3, Rng(50));
  REQUIRE(a.outcomes.size() == tasks.size());
  CHECK(a.outcomes == b.outcomes);
  CHECK(a.avg_at_k == b.avg_at_k);
  CHECK(a.best_at_k == b.best_at_k);

  EvalResult re = aggregate_outcomes(a.outcomes);
  CHECK(re.avg_at_k == a.avg_at_k);
  CHECK(re.best_at_k == a.best_at_k);

  CHECK_THROWS(evaluate(p, world, {}, 3, Rng(1)));
  CHECK_THROWS(evaluate(p, world, tasks, 0, Rng(1)));
}

TEST_CASE("target turn histogram bins regions and late turns") {
  TurnHistogram h = target_turn_histogram({1, 2, 5, 9, 12});
  CHECK(h.total == 5);
  CHECK(h.region_counts == std::array<long, 3>{2, 1, 2});
  CHECK(h.per_turn_counts[0] == 1);   // turn 1
  CHECK(h.per_turn_counts[1] == 1);   // turn 2
  CHECK(h.per_turn_counts[4] == 1);   // turn 5
  CHECK(h.per_turn_counts[8] == 1);   // turn 9
  CHECK(h.per_turn_counts[10] == 1);  // 11+ bin catches 12
  REQUIRE(h.mean_step.has_value());
  CHECK(*h.mean_step == doctest::Approx(5.8).epsilon(1e-12));

  double region_sum = 0.0, turn_sum = 0.0;
  for (double f : h.region_fractions) region_sum += f;
  for (double f : h.per_turn_fractions) turn_sum += f;
  CHECK(region_sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(turn_sum == doctest::Approx(1.0).epsilon(1e-12));

  // bin edges: 3 and 4 straddle the first boundary, 8 and 9 the second;
  // 10 is the last dedicated turn bin, 11 the first aggregated one
  TurnHistogram e = target_turn_histogram({3, 4, 8, 9, 10, 11});
  CHECK(e.region_counts == std::array<long, 3>{1, 2, 3});
  CHECK(e.per_turn_counts[9] == 1);
  CHECK(e.per_turn_counts[10] == 1);

  TurnHistogram empty = target_turn_histogram({});
  CHECK(empty.total == 0);
  CHECK_FALSE(empty.mean_step.has_value());
  for (double f : empty.region_fractions) CHECK(f == 0.0);

  CHECK_THROWS(target_turn_histogram({0}));
}

TEST_CASE("placement arms share arithmetic and seeds") {
  ExperimentConfig cfg = small_codelock(16);
  World world(cfg);
  PolicyParameters p = init_policy(world.vocab(), cfg, Rng(9));
  std::vector<int> tasks = world.train_task_indices();

  PlacementResult a =
      placement_experiment(p, world, FeedbackSource::oracle, tasks, 2, Rng(21));
  PlacementResult b =
      placement_experiment(p, world, FeedbackSource::oracle, tasks, 2, Rng(21));

  REQUIRE_FALSE(a.empty);  // untrained policy on a 2-symbol lock fails plenty
  CHECK(a.base_rollouts == static_cast<long>(tasks.size()) * 2);
  CHECK(a.base_failures >= 1);
  CHECK(a.base_failures <= a.base_rollouts);
  for (double r : {a.no_feedback_rate, a.start_rate, a.target_rate}) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
  CHECK(a.start_gain == (a.start_rate - a.no_feedback_rate) * 100.0);
  CHECK(a.target_gain == (a.target_rate - a.no_feedback_rate) * 100.0);
  CHECK(a.target_minus_start == a.target_gain - a.start_gain);

  CHECK(a.base_failures == b.base_failures);
  CHECK(a.no_feedback_rate == b.no_feedback_rate);
  CHECK(a.start_rate == b.start_rate);
  CHECK(a.target_rate == b.target_rate);

  CHECK_THROWS(placement_experiment(p, world, FeedbackSource::oracle, {}, 2, Rng(1)));
  CHECK_THROWS(placement_experiment(p, world, FeedbackSource::oracle, tasks, 0, Rng(1)));
}

TEST_CASE("targeted rollout replays the base prefix token for token") {
  ExperimentConfig cfg;
  cfg.env = EnvId::toolchain;
  cfg.train_tasks = 6;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 16;
  World world(cfg);
  PolicyParameters p = init_policy(world.vocab(), cfg, Rng(4));

  int checked = 0;
  Rng rng(60);
  for (int task = 0; task < world.num_tasks() && checked < 4; ++task) {
    Trajectory base = policy_rollout(p, world, task, rng.derive(task));
    if (base.success) continue;
    HindsightReport rep = analyze(world, task, base, FeedbackSource::oracle,
                                  ReportVariant::single, 1);
    const FeedbackItem& item = rep.items[0];
    Trajectory targeted = targeted_feedback_rollout(p, world, task, base, item,
                                                    rng.derive(task).derive(1));
    REQUIRE(targeted.length() >= item.step - 1);
    CHECK(same_turns(base, targeted, static_cast<size_t>(item.step - 1)));
    CHECK(targeted.length() <= world.horizon());
    ++checked;
  }
  CHECK(checked == 4);
}

TEST_CASE("placement reports empty when the policy never fails") {
  ExperimentConfig cfg;
  cfg.env = EnvId::codelock;
  cfg.code_length = 1;
  cfg.alphabet_size = 1;
  cfg.train_tasks = 10;
  World world(cfg);
  PolicyParameters p = perfect_single_symbol_policy(world);

  EvalResult eval = evaluate(p, world, world.eval_task_indices(), 2, Rng(5));
  CHECK(eval.avg_at_k == 1.0);

  PlacementResult res = placement_experiment(
      p, world, FeedbackSource::oracle, world.train_task_indices(), 2, Rng(6));
  CHECK(res.empty);
  CHECK(res.base_rollouts == 20);
  CHECK(res.base_failures == 0);
  CHECK(res.start_gain == 0.0);
  CHECK(res.target_gain == 0.0);
}

TEST_CASE("run_episode keeps the prefix out of the recorded turns") {
  ExperimentConfig cfg = small_codelock(2);
  World world(cfg);
  auto env = world.make_env(0);
  TokenSequence prefix{Vocab::kFbBegin, Vocab::kFbNote, Vocab::kFbEnd};

  std::vector<TokenSequence> seen_contexts;
  Trajectory traj = run_episode(*env, world.task_id(0), 99, prefix,
                                [&](const TokenSequence& context) {
                                  seen_contexts.push_back(context);
                                  return env->canonical_action();
                                });
  CHECK(traj.success);
  CHECK(traj.seed == 99);
  REQUIRE(traj.length() == cfg.code_length);
  REQUIRE(!seen_contexts.empty());

  // every context starts with the prefix, but no recorded state contains it
  TokenSequence expected_first = prefix;
  expected_first.insert(expected_first.end(), traj.turns[0].state.begin(),
                        traj.turns[0].state.end());
  CHECK(seen_contexts[0] == expected_first);
  CHECK(traj.turns[0].state.size() == 3);  // task marker, id, position
}

TEST_CASE("decoding limits follow the environment defaults and overrides") {
  ExperimentConfig cl = small_codelock(2);
  CHECK(decoding_limits(World(cl)).max_action_tokens == 2);

  ExperimentConfig tc;
  tc.env = EnvId::toolchain;
  tc.train_tasks = 2;
  CHECK(decoding_limits(World(tc)).max_action_tokens == 3);

  tc.max_action_tokens = 5;
  CHECK(decoding_limits(World(tc)).max_action_tokens == 5);
}
