#include <doctest.h>

#include <algorithm>
#include <set>

#include "refocus/config.hpp"
#include "refocus/env.hpp"
#include "refocus/hindsight.hpp"
#include "refocus/policy.hpp"
#include "refocus/rng.hpp"

using namespace refocus;

namespace {

ExperimentConfig codelock_cfg(int tasks = 4) {
  ExperimentConfig cfg;
  cfg.env = EnvId::codelock;
  cfg.train_tasks = tasks;
  return cfg;
}

ExperimentConfig toolchain_cfg(int tasks = 8) {
  ExperimentConfig cfg;
  cfg.env = EnvId::toolchain;
  cfg.train_tasks = tasks;
  return cfg;
}

// Uniformly random legal actions, for harvesting failures.
Trajectory random_rollout(const World& world, int task_index, Rng rng) {
  auto env = world.make_env(task_index);
  const std::vector<Token>& legal = world.vocab().legal_actions();
  Trajectory traj;
  traj.task_id = world.task_id(task_index);
  TokenSequence obs = env->reset();
  bool done = false;
  while (!done) {
    TokenSequence action;
    while (action.size() < 2) {
      Token t = legal[rng.uniform_int(legal.size())];
      if (t == Vocab::kEos) break;
      action.push_back(t);
    }
    action.push_back(Vocab::kEos);
    TokenSequence next = env->step(action, &done);
    traj.turns.push_back(Turn{obs, action});
    obs = next;
  }
  traj.terminal_reward = env->judge();
  traj.success = traj.terminal_reward == 1;
  return traj;
}

}  // namespace

TEST_CASE("codelock observations carry task identity and position") {
  World world(codelock_cfg());
  auto env = world.make_env(1);
  TokenSequence obs = env->reset();
  REQUIRE(obs.size() == 3);
  CHECK(obs[0] == world.codelock_tokens().task);
  CHECK(obs[1] == world.codelock_tokens().ids[1]);
  CHECK(obs[2] == world.codelock_tokens().pos[0]);

  bool done = false;
  TokenSequence next = env->step(env->canonical_action(), &done);
  CHECK_FALSE(done);
  REQUIRE(next.size() == 3);
  CHECK(next[0] == Vocab::kOk);
  CHECK(next[1] == world.codelock_tokens().ids[1]);
  CHECK(next[2] == world.codelock_tokens().pos[1]);
}

TEST_CASE("codelock judges all-correct as success and any miss as failure") {
  World world(codelock_cfg());
  {
    auto env = world.make_env(0);
    env->reset();
    bool done = false;
    int steps = 0;
    while (!done) {
      env->step(env->canonical_action(), &done);
      ++steps;
    }
    CHECK(steps == world.config().code_length);
    CHECK(env->judge() == 1);
  }
  {
    auto env = world.make_env(0);
    env->reset();
    bool done = false;
    TokenSequence wrong = env->canonical_action();
    // swap in a different symbol for turn 1
    const auto& syms = world.codelock_tokens().syms;
    wrong[0] = wrong[0] == syms[0] ? syms[1] : syms[0];
    TokenSequence obs = env->step(wrong, &done);
    CHECK(obs[0] == Vocab::kErr);
    while (!done) env->step(env->canonical_action(), &done);
    CHECK(env->judge() == 0);
  }
}

TEST_CASE("codelock accepts only the exact single-symbol action") {
  World world(codelock_cfg());
  auto env = world.make_env(2);
  env->reset();
  TokenSequence canon = env->canonical_action();
  CHECK(env->accepts(canon));
  CHECK(env->accepts(canon));  // pure: repeated queries agree

  TokenSequence doubled{canon[0], canon[0], Vocab::kEos};
  CHECK_FALSE(env->accepts(doubled));
  TokenSequence empty{Vocab::kEos};
  CHECK_FALSE(env->accepts(empty));
}

TEST_CASE("tasks are deterministic under the same index") {
  World a(codelock_cfg()), b(codelock_cfg());
  for (int task = 0; task < 4; ++task) {
    auto ea = a.make_env(task), eb = b.make_env(task);
    ea->reset();
    eb->reset();
    bool da = false, db = false;
    while (!da) {
      TokenSequence ca = ea->canonical_action();
      CHECK(ca == eb->canonical_action());
      ea->step(ca, &da);
      eb->step(ca, &db);
    }
  }
}

TEST_CASE("world splits train and eval tasks disjointly") {
  ExperimentConfig cfg = codelock_cfg(3);
  cfg.eval_tasks = 5;
  World world(cfg);
  CHECK(world.num_tasks() == 8);
  std::vector<int> tr = world.train_task_indices();
  std::vector<int> ev = world.eval_task_indices();
  CHECK(tr == std::vector<int>{0, 1, 2});
  CHECK(ev == std::vector<int>{3, 4, 5, 6, 7});

  cfg.eval_tasks = 0;
  World shared(cfg);
  CHECK(shared.eval_task_indices() == shared.train_task_indices());
}

TEST_CASE("toolchain canonical rollout completes the chain") {
  World world(toolchain_cfg());
  for (int task = 0; task < 8; ++task) {
    Trajectory traj = canonical_rollout(world, task);
    CHECK(traj.success);
    CHECK(traj.terminal_reward == 1);
    CHECK(traj.length() <= world.horizon());
    for (const Turn& turn : traj.turns) {
      REQUIRE(!turn.action.empty());
      CHECK(turn.action.back() == Vocab::kEos);
    }
  }
}

TEST_CASE("toolchain consumer call without its credential reports need-cred") {
  World world(toolchain_cfg());
  const ToolChainTokens& tk = world.toolchain_tokens();
  // find a task whose chain has a consumer call after the first position
  for (int task = 0; task < 8; ++task) {
    auto probe = world.make_env(task);
    probe->reset();
    // walk canonically until the upcoming canonical action echoes a credential
    bool done = false;
    bool found = false;
    while (!done) {
      TokenSequence canon = probe->canonical_action();
      bool echoes_cred =
          canon.size() >= 3 &&
          std::find(tk.creds.begin(), tk.creds.end(), canon[1]) != tk.creds.end();
      if (echoes_cred) {
        // replay the same prefix in a fresh env, then skip the login:
        // issue the consumer call before its credential was ever acquired
        auto env = world.make_env(task);
        env->reset();
        // nothing acquired yet: fire the consumer call immediately
        TokenSequence early{canon[0], Vocab::kEos};
        CHECK_FALSE(env->accepts(early));
        bool d2 = false;
        TokenSequence obs = env->step(early, &d2);
        REQUIRE(obs.size() >= 2);
        CHECK(obs[0] == Vocab::kErr);
        CHECK(obs[1] == tk.need_cred);
        found = true;
        break;
      }
      probe->step(canon, &done);
    }
    if (found) return;
  }
  FAIL("no chain with a credential-consuming call in the task set");
}

TEST_CASE("toolchain wrong-position call reports bad-order") {
  World world(toolchain_cfg());
  const ToolChainTokens& tk = world.toolchain_tokens();
  for (int task = 0; task < 8; ++task) {
    auto env = world.make_env(task);
    env->reset();
    TokenSequence first = env->canonical_action();
    // pick any plain call token that is not the canonical opener
    for (Token call : tk.acts) {
      if (call == first[0]) continue;
      bool done = false;
      TokenSequence obs = env->step({call, Vocab::kEos}, &done);
      REQUIRE(obs.size() >= 2);
      CHECK(obs[0] == Vocab::kErr);
      CHECK(obs[1] == tk.bad_order);
      return;
    }
  }
  FAIL("no plain call token available");
}

TEST_CASE("toolchain tolerates extra trailing tokens on plain calls") {
  World world(toolchain_cfg());
  const ToolChainTokens& tk = world.toolchain_tokens();
  for (int task = 0; task < 8; ++task) {
    auto env = world.make_env(task);
    env->reset();
    TokenSequence canon = env->canonical_action();
    bool is_plain =
        std::find(tk.acts.begin(), tk.acts.end(), canon[0]) != tk.acts.end();
    if (!is_plain) continue;
    TokenSequence padded{canon[0], tk.acts[0], Vocab::kEos};
    CHECK(env->accepts(padded));
    bool done = false;
    TokenSequence obs = env->step(padded, &done);
    CHECK(obs[0] == Vocab::kOk);
    return;
  }
  FAIL("no task opens with a plain call");
}

TEST_CASE("failed toolchain episodes run to the horizon") {
  World world(toolchain_cfg());
  Trajectory traj = random_rollout(world, 0, Rng(1234));
  if (!traj.success) CHECK(traj.length() == world.horizon());
}

TEST_CASE("oracle attribution lists the earliest wrong step only") {
  // codes are per-task; find a task and build: right, wrong, then the
  // remaining recorded actions correct under the corrected replay
  World world(codelock_cfg());
  auto env = world.make_env(0);
  env->reset();
  const auto& syms = world.codelock_tokens().syms;

  Trajectory traj;
  traj.task_id = world.task_id(0);
  TokenSequence obs = env->reset();
  bool done = false;
  int turn = 0;
  while (!done) {
    TokenSequence canon = env->canonical_action();
    TokenSequence action = canon;
    if (turn == 1) action[0] = canon[0] == syms[0] ? syms[1] : syms[0];
    TokenSequence next = env->step(action, &done);
    traj.turns.push_back(Turn{obs, action});
    obs = next;
    ++turn;
  }
  traj.terminal_reward = env->judge();
  traj.success = false;
  REQUIRE(env->judge() == 0);

  OracleAttribution attr = oracle_attribution(world, 0, traj);
  REQUIRE(attr.items.size() == 1);
  CHECK(attr.items[0].step == 2);
  const TokenSequence& fb = attr.items[0].feedback;
  REQUIRE(fb.size() == 4);
  CHECK(fb[0] == Vocab::kFbBegin);
  CHECK(fb[1] == Vocab::kCorrectIs);
  CHECK(fb[3] == Vocab::kFbEnd);
  // the quoted token is the canonical symbol, and it fixes the episode
  Trajectory fixed = replay_with_corrections(world, 0, traj, attr);
  CHECK(fixed.success);
}

TEST_CASE("attribution skips consequences of an earlier listed step") {
  // wrong at turn 1 with the symbol the code expects at turn 2, then replay
  // the recorded tail; under the corrected walk later turns may realign
  World world(codelock_cfg());
  auto env = world.make_env(1);
  TokenSequence obs = env->reset();
  const auto& syms = world.codelock_tokens().syms;

  Trajectory traj;
  traj.task_id = world.task_id(1);
  bool done = false;
  int turn = 0;
  while (!done) {
    TokenSequence canon = env->canonical_action();
    TokenSequence action = canon;
    if (turn == 0) action[0] = canon[0] == syms[0] ? syms[1] : syms[0];
    TokenSequence next = env->step(action, &done);
    traj.turns.push_back(Turn{obs, action});
    obs = next;
    ++turn;
  }
  traj.terminal_reward = env->judge();
  traj.success = false;

  OracleAttribution attr = oracle_attribution(world, 1, traj);
  REQUIRE(attr.items.size() == 1);
  CHECK(attr.items[0].step == 1);
  CHECK(replay_with_corrections(world, 1, traj, attr).success);
}

TEST_CASE("attribution ignores accepted noncanonical toolchain actions") {
  World world(toolchain_cfg());
  const ToolChainTokens& tk = world.toolchain_tokens();
  for (int task = 0; task < 8; ++task) {
    Trajectory canon = canonical_rollout(world, task);
    // pad the first plain-call action with a junk token; stays accepted
    int padded_turn = -1;
    for (int t = 0; t < canon.length(); ++t) {
      Token head = canon.turns[t].action[0];
      if (std::find(tk.acts.begin(), tk.acts.end(), head) != tk.acts.end()) {
        canon.turns[t].action.insert(canon.turns[t].action.end() - 1, tk.acts[0]);
        padded_turn = t + 1;
        break;
      }
    }
    if (padded_turn < 0 || padded_turn == canon.length()) continue;
    // corrupt the following turn so the episode genuinely fails
    int corrupt_turn = padded_turn + 1;
    canon.turns[corrupt_turn - 1].action = {tk.logins[0], Vocab::kEos};

    // the padded replay no longer matches recorded observations past the
    // corruption; rebuild the tail honestly by replaying through the env
    auto env = world.make_env(task);
    TokenSequence obs = env->reset();
    Trajectory traj;
    traj.task_id = canon.task_id;
    bool done = false;
    int t = 0;
    while (!done) {
      TokenSequence action = t < canon.length()
                                 ? canon.turns[t].action
                                 : TokenSequence{tk.acts[1], Vocab::kEos};
      TokenSequence next = env->step(action, &done);
      traj.turns.push_back(Turn{obs, action});
      obs = next;
      ++t;
    }
    traj.terminal_reward = env->judge();
    traj.success = traj.terminal_reward == 1;
    if (traj.success) continue;

    OracleAttribution attr = oracle_attribution(world, task, traj);
    for (const FeedbackItem& item : attr.items)
      CHECK(item.step != padded_turn);
    CHECK(replay_with_corrections(world, task, traj, attr).success);
    return;
  }
  FAIL("no suitable task produced the scenario");
}

TEST_CASE("corrected replay fixes 100 random failures in both environments") {
  for (bool chain : {false, true}) {
    World world(chain ? toolchain_cfg() : codelock_cfg());
    int failures = 0;
    uint64_t seed = 0;
    while (failures < 100) {
      Trajectory traj =
          random_rollout(world, static_cast<int>(seed) % world.num_tasks(),
                         Rng(seed));
      ++seed;
      if (traj.success) continue;
      ++failures;
      OracleAttribution attr =
          oracle_attribution(world, static_cast<int>(seed - 1) % world.num_tasks(),
                             traj);
      REQUIRE(!attr.items.empty());
      int prev = 0;
      for (const FeedbackItem& item : attr.items) {
        CHECK(item.step > prev);
        prev = item.step;
      }
      Trajectory fixed = replay_with_corrections(
          world, static_cast<int>(seed - 1) % world.num_tasks(), traj, attr);
      CHECK(fixed.success);
    }
  }
}

TEST_CASE("action_from_feedback inverts the quote") {
  FeedbackItem item;
  item.step = 3;
  item.feedback = {Vocab::kFbBegin, Vocab::kCorrectIs, 42, 17, Vocab::kFbEnd};
  TokenSequence action = action_from_feedback(item);
  CHECK(action == TokenSequence{42, 17, Vocab::kEos});
}

TEST_CASE("judge_trajectory agrees with the live judge") {
  World world(toolchain_cfg());
  for (uint64_t seed = 0; seed < 10; ++seed) {
    int task = static_cast<int>(seed) % world.num_tasks();
    Trajectory traj = random_rollout(world, task, Rng(seed + 500));
    CHECK(judge_trajectory(world, task, traj) == traj.terminal_reward);
  }
}
