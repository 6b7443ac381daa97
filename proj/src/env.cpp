#include "refocus/env.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace refocus {
namespace {

// Tokens the executor acts on: everything before the first EOS.
TokenSequence action_content(const TokenSequence& action) {
  TokenSequence out;
  for (Token t : action) {
    if (t == Vocab::kEos) break;
    out.push_back(t);
  }
  return out;
}

std::vector<int> sample_distinct(Rng& rng, int pool, int count) {
  std::vector<int> all(pool);
  for (int i = 0; i < pool; ++i) all[i] = i;
  for (int i = 0; i < count; ++i) {
    int j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(pool - i)));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

class CodeLockEnv final : public Environment {
 public:
  CodeLockEnv(CodeLockTokens tk, int id_index, std::vector<int> code)
      : tk_(std::move(tk)), id_index_(id_index), code_(std::move(code)) {}

  TokenSequence reset() override {
    turn_ = 0;
    wrong_ = 0;
    done_ = false;
    return {tk_.task, tk_.ids[id_index_], tk_.pos[0]};
  }

  TokenSequence step(const TokenSequence& action, bool* done) override {
    if (done_) throw std::logic_error("CodeLockEnv::step after done");
    const bool ok = accepts(action);
    if (!ok) ++wrong_;
    ++turn_;
    done_ = turn_ == static_cast<int>(code_.size());
    *done = done_;
    TokenSequence obs{ok ? Vocab::kOk : Vocab::kErr, tk_.ids[id_index_]};
    if (!done_) obs.push_back(tk_.pos[turn_]);
    return obs;
  }

  bool done() const override { return done_; }

  int judge() const override {
    if (!done_) throw std::logic_error("CodeLockEnv::judge before done");
    return wrong_ == 0 ? 1 : 0;
  }

  TokenSequence canonical_action() const override {
    if (done_) throw std::logic_error("CodeLockEnv::canonical_action after done");
    return {tk_.syms[code_[turn_]], Vocab::kEos};
  }

  bool accepts(const TokenSequence& action) const override {
    if (done_) throw std::logic_error("CodeLockEnv::accepts after done");
    TokenSequence content = action_content(action);
    return content.size() == 1 && content[0] == tk_.syms[code_[turn_]];
  }

 private:
  CodeLockTokens tk_;
  int id_index_;
  std::vector<int> code_;  // symbol indices, one per turn
  int turn_ = 0;
  int wrong_ = 0;
  bool done_ = false;
};

struct ChainCall {
  Token call = -1;
  bool login = false;
  Token reveals = -1;   // credential produced (logins only)
  Token consumes = -1;  // credential that must be echoed alongside the call
};

class ToolChainEnv final : public Environment {
 public:
  ToolChainEnv(ToolChainTokens tk, std::vector<ChainCall> chain, int horizon)
      : tk_(std::move(tk)), chain_(std::move(chain)), horizon_(horizon) {}

  TokenSequence reset() override {
    progress_ = 0;
    turns_ = 0;
    done_ = false;
    acquired_.clear();
    return {tk_.task, tk_.next, chain_[0].call};
  }

  TokenSequence step(const TokenSequence& action, bool* done) override {
    if (done_) throw std::logic_error("ToolChainEnv::step after done");
    Token reason = tk_.bad_order;
    const bool ok = check(action_content(action), &reason);

    if (ok) {
      if (chain_[progress_].login) acquired_.push_back(chain_[progress_].reveals);
      ++progress_;
    }
    ++turns_;

    TokenSequence obs;
    if (ok && progress_ == static_cast<int>(chain_.size())) {
      done_ = true;
      obs = {Vocab::kOk, tk_.done_marker};
    } else if (ok) {
      obs = {Vocab::kOk};
      if (chain_[progress_ - 1].login) obs.push_back(chain_[progress_ - 1].reveals);
      obs.push_back(tk_.next);
      obs.push_back(chain_[progress_].call);
    } else {
      obs = {Vocab::kErr, reason, tk_.next, chain_[progress_].call};
    }
    if (turns_ >= horizon_) done_ = true;
    *done = done_;
    return obs;
  }

  bool done() const override { return done_; }

  int judge() const override {
    if (!done_) throw std::logic_error("ToolChainEnv::judge before done");
    return progress_ == static_cast<int>(chain_.size()) ? 1 : 0;
  }

  TokenSequence canonical_action() const override {
    if (done_) throw std::logic_error("ToolChainEnv::canonical_action after done");
    const ChainCall& c = chain_[progress_];
    TokenSequence a{c.call};
    if (c.consumes >= 0) a.push_back(c.consumes);
    a.push_back(Vocab::kEos);
    return a;
  }

  bool accepts(const TokenSequence& action) const override {
    if (done_) throw std::logic_error("ToolChainEnv::accepts after done");
    Token reason;
    return check(action_content(action), &reason);
  }

 private:
  // Shared acceptance rule. Credential problems outrank ordering: a consumer
  // call whose credential is missing reports need-cred even if it is also
  // early. Non-consumer calls are judged on position alone, so trailing
  // extra tokens are tolerated.
  bool check(const TokenSequence& content, Token* reason) const {
    *reason = tk_.bad_order;
    int k = -1;
    if (!content.empty()) {
      for (size_t i = 0; i < chain_.size(); ++i) {
        if (chain_[i].call == content[0]) {
          k = static_cast<int>(i);
          break;
        }
      }
    }
    if (k < 0) return false;
    const ChainCall& c = chain_[k];
    if (c.consumes >= 0) {
      const bool have = std::find(acquired_.begin(), acquired_.end(),
                                  c.consumes) != acquired_.end();
      if (!have) {
        *reason = tk_.need_cred;
        return false;
      }
      if (k != progress_) return false;
      if (content.size() < 2 || content[1] != c.consumes) {
        *reason = tk_.need_cred;
        return false;
      }
      return true;
    }
    return k == progress_;
  }

  ToolChainTokens tk_;
  std::vector<ChainCall> chain_;
  int horizon_;
  int progress_ = 0;
  int turns_ = 0;
  bool done_ = false;
  std::vector<Token> acquired_;
};

std::vector<ChainCall> generate_chain(const ExperimentConfig& cfg,
                                      const ToolChainTokens& tk, Rng rng) {
  const int span = cfg.max_calls - cfg.min_calls + 1;
  const int n = cfg.min_calls + static_cast<int>(rng.uniform_int(span));
  const int max_logins = std::min(cfg.max_credentials, n - 1);
  const int c = 1 + static_cast<int>(rng.uniform_int(max_logins));

  // Logins sit anywhere except the final position, so every credential has a
  // downstream consumer slot available.
  std::vector<int> login_pos = sample_distinct(rng, n - 1, c);
  std::sort(login_pos.begin(), login_pos.end());
  std::vector<int> login_tok = sample_distinct(rng, cfg.login_pool, c);
  std::vector<int> act_tok = sample_distinct(rng, cfg.act_pool, n - c);
  std::vector<int> cred_tok = sample_distinct(rng, cfg.cred_pool, c);

  std::vector<ChainCall> chain(n);
  int li = 0, ai = 0;
  int last_login = -1;  // chain index of the most recent login
  bool consumed_since_login = false;
  for (int i = 0; i < n; ++i) {
    bool is_login = li < c && login_pos[li] == i;
    if (is_login) {
      chain[i].call = tk.logins[login_tok[li]];
      chain[i].login = true;
      chain[i].reveals = tk.creds[cred_tok[li]];
      last_login = i;
      consumed_since_login = false;
      ++li;
    } else {
      chain[i].call = tk.acts[act_tok[ai]];
      ++ai;
      if (last_login >= 0) {
        // The first call after a login always uses its credential; later
        // calls may or may not, so chains vary in dependency density.
        bool use = !consumed_since_login || rng.uniform01() < 0.5;
        if (use) {
          chain[i].consumes = chain[last_login].reveals;
          consumed_since_login = true;
        }
      }
    }
  }
  return chain;
}

}  // namespace

World::World(const ExperimentConfig& cfg) : cfg_(cfg), vocab_(Vocab::base()) {
  if (cfg_.env == EnvId::codelock) {
    cl_.task = vocab_.add("task:codelock", Role::observation);
    for (int i = 0; i < num_tasks(); ++i)
      cl_.ids.push_back(vocab_.add("lock:" + std::to_string(i), Role::observation));
    for (int p = 1; p <= cfg_.code_length; ++p)
      cl_.pos.push_back(vocab_.add("pos:" + std::to_string(p), Role::observation));
    for (int s = 0; s < cfg_.alphabet_size; ++s)
      cl_.syms.push_back(vocab_.add("sym:" + std::to_string(s), Role::action));
  } else {
    tc_.task = vocab_.add("task:toolchain", Role::observation);
    tc_.need_cred = vocab_.add("need-cred", Role::observation);
    tc_.bad_order = vocab_.add("bad-order", Role::observation);
    tc_.next = vocab_.add("next", Role::observation);
    tc_.done_marker = vocab_.add("done", Role::observation);
    for (int i = 0; i < cfg_.login_pool; ++i)
      tc_.logins.push_back(vocab_.add("login:" + std::to_string(i), Role::action));
    for (int i = 0; i < cfg_.act_pool; ++i)
      tc_.acts.push_back(vocab_.add("act:" + std::to_string(i), Role::action));
    for (int i = 0; i < cfg_.cred_pool; ++i)
      tc_.creds.push_back(vocab_.add("cred:" + std::to_string(i), Role::action));
  }
}

std::vector<int> World::train_task_indices() const {
  std::vector<int> out(cfg_.train_tasks);
  for (int i = 0; i < cfg_.train_tasks; ++i) out[i] = i;
  return out;
}

std::vector<int> World::eval_task_indices() const {
  if (cfg_.eval_tasks == 0) return train_task_indices();
  std::vector<int> out(cfg_.eval_tasks);
  for (int i = 0; i < cfg_.eval_tasks; ++i) out[i] = cfg_.train_tasks + i;
  return out;
}

uint64_t World::task_instance_seed(int task_index) const {
  return Rng(cfg_.task_seed).derive(static_cast<uint64_t>(task_index)).state();
}

std::string World::task_id(int task_index) const {
  const char* prefix = cfg_.env == EnvId::codelock ? "codelock-" : "toolchain-";
  return prefix + std::to_string(task_index);
}

std::unique_ptr<Environment> World::make_env(int task_index) const {
  if (task_index < 0 || task_index >= num_tasks())
    throw std::out_of_range("World::make_env: bad task index");
  Rng rng(task_instance_seed(task_index));
  if (cfg_.env == EnvId::codelock) {
    std::vector<int> code(cfg_.code_length);
    for (int& s : code)
      s = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg_.alphabet_size)));
    return std::make_unique<CodeLockEnv>(cl_, task_index, std::move(code));
  }
  return std::make_unique<ToolChainEnv>(tc_, generate_chain(cfg_, tc_, rng),
                                        cfg_.horizon);
}

OracleAttribution oracle_attribution(const World& world, int task_index,
                                     const Trajectory& traj) {
  if (traj.success)
    throw std::invalid_argument("oracle_attribution: trajectory succeeded");
  auto env = world.make_env(task_index);
  env->reset();
  OracleAttribution out;
  bool done = false;
  for (int t = 1; t <= traj.length() && !done; ++t) {
    if (env->accepts(traj.turns[t - 1].action)) {
      env->step(traj.turns[t - 1].action, &done);
    } else {
      TokenSequence canon = env->canonical_action();
      TokenSequence fb{Vocab::kFbBegin, Vocab::kCorrectIs};
      for (Token tok : action_content(canon)) fb.push_back(tok);
      fb.push_back(Vocab::kFbEnd);
      out.items.push_back(FeedbackItem{t, std::move(fb)});
      env->step(canon, &done);
    }
  }
  return out;
}

TokenSequence action_from_feedback(const FeedbackItem& item) {
  const TokenSequence& fb = item.feedback;
  if (fb.size() < 4 || fb.front() != Vocab::kFbBegin || fb.back() != Vocab::kFbEnd ||
      fb[1] != Vocab::kCorrectIs)
    throw std::invalid_argument("action_from_feedback: not a correction block");
  TokenSequence action(fb.begin() + 2, fb.end() - 1);
  action.push_back(Vocab::kEos);
  return action;
}

Trajectory replay_with_corrections(const World& world, int task_index,
                                   const Trajectory& traj,
                                   const OracleAttribution& attribution) {
  auto env = world.make_env(task_index);
  Trajectory out;
  out.task_id = traj.task_id;
  out.seed = traj.seed;
  TokenSequence obs = env->reset();
  size_t next_item = 0;
  bool done = false;
  for (int t = 1; !done; ++t) {
    TokenSequence action;
    if (next_item < attribution.items.size() &&
        attribution.items[next_item].step == t) {
      action = action_from_feedback(attribution.items[next_item]);
      ++next_item;
    } else if (t <= traj.length()) {
      action = traj.turns[t - 1].action;
    } else {
      throw std::logic_error("replay_with_corrections: ran past the recording");
    }
    TokenSequence next_obs = env->step(action, &done);
    out.turns.push_back(Turn{std::move(obs), std::move(action)});
    obs = std::move(next_obs);
  }
  out.terminal_reward = env->judge();
  out.success = out.terminal_reward == 1;
  return out;
}

int judge_trajectory(const World& world, int task_index, const Trajectory& traj) {
  auto env = world.make_env(task_index);
  env->reset();
  bool done = false;
  for (const Turn& turn : traj.turns) {
    if (done) throw std::logic_error("judge_trajectory: turns continue past done");
    env->step(turn.action, &done);
  }
  if (!done) throw std::logic_error("judge_trajectory: trajectory is incomplete");
  return env->judge();
}

Trajectory canonical_rollout(const World& world, int task_index) {
  auto env = world.make_env(task_index);
  Trajectory out;
  out.task_id = world.task_id(task_index);
  out.seed = world.task_instance_seed(task_index);
  TokenSequence obs = env->reset();
  bool done = false;
  while (!done) {
    TokenSequence action = env->canonical_action();
    TokenSequence next_obs = env->step(action, &done);
    out.turns.push_back(Turn{std::move(obs), std::move(action)});
    obs = std::move(next_obs);
  }
  out.terminal_reward = env->judge();
  out.success = out.terminal_reward == 1;
  return out;
}

}  // namespace refocus
