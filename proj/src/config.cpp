#include "refocus/config.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace refocus {

std::string to_string(EnvId e) {
  return e == EnvId::codelock ? "codelock" : "toolchain";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::refocus_single: return "refocus-single";
    case Method::refocus_multi: return "refocus-multi";
    case Method::sft: return "sft";
    case Method::grpo: return "grpo";
    case Method::fulltraj_distill: return "fulltraj-distill";
    case Method::denseturn_distill: return "denseturn-distill";
  }
  return "refocus-multi";
}

std::string to_string(TeacherMode t) {
  switch (t) {
    case TeacherMode::ema: return "ema";
    case TeacherMode::current: return "current";
    case TeacherMode::initial: return "initial";
  }
  return "ema";
}

std::string to_string(InitScheme s) {
  return s == InitScheme::structured ? "structured" : "uniform";
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool fail(ConfigError* err, const std::string& field, const std::string& msg) {
  if (err) *err = {field, msg};
  return false;
}

struct Parser {
  std::map<std::string, std::string> kv;
  ConfigError* err;

  bool take_int(const std::string& key, int* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return true;
    try {
      size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      *out = static_cast<int>(v);
    } catch (...) {
      return fail(err, key, "expected an integer, got '" + it->second + "'");
    }
    kv.erase(it);
    return true;
  }

  bool take_u64(const std::string& key, uint64_t* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return true;
    try {
      size_t pos = 0;
      unsigned long long v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      *out = v;
    } catch (...) {
      return fail(err, key, "expected a non-negative integer, got '" + it->second + "'");
    }
    kv.erase(it);
    return true;
  }

  bool take_double(const std::string& key, double* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return true;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      *out = v;
    } catch (...) {
      return fail(err, key, "expected a number, got '" + it->second + "'");
    }
    kv.erase(it);
    return true;
  }

  bool take_bool(const std::string& key, bool* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return true;
    if (it->second == "true") *out = true;
    else if (it->second == "false") *out = false;
    else return fail(err, key, "expected true or false, got '" + it->second + "'");
    kv.erase(it);
    return true;
  }

  std::optional<std::string> take_string(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
};

}  // namespace

std::optional<ExperimentConfig> parse_config(const std::string& text,
                                             ConfigError* err) {
  Parser p;
  p.err = err;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      fail(err, "line " + std::to_string(lineno), "expected 'key = value'");
      return std::nullopt;
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) {
      fail(err, "line " + std::to_string(lineno), "empty key");
      return std::nullopt;
    }
    if (p.kv.count(key)) {
      fail(err, key, "duplicate key");
      return std::nullopt;
    }
    p.kv[key] = value;
  }

  ExperimentConfig cfg;

  if (auto v = p.take_string("env")) {
    if (*v == "codelock") cfg.env = EnvId::codelock;
    else if (*v == "toolchain") cfg.env = EnvId::toolchain;
    else { fail(err, "env", "unknown environment '" + *v + "'"); return std::nullopt; }
  }
  if (auto v = p.take_string("method")) {
    if (*v == "refocus-single") cfg.method = Method::refocus_single;
    else if (*v == "refocus-multi") cfg.method = Method::refocus_multi;
    else if (*v == "sft") cfg.method = Method::sft;
    else if (*v == "grpo") cfg.method = Method::grpo;
    else if (*v == "fulltraj-distill") cfg.method = Method::fulltraj_distill;
    else if (*v == "denseturn-distill") cfg.method = Method::denseturn_distill;
    else { fail(err, "method", "unknown method '" + *v + "'"); return std::nullopt; }
  }
  if (auto v = p.take_string("feedback_source")) {
    auto s = feedback_source_from(*v);
    if (!s) { fail(err, "feedback_source", "unknown source '" + *v + "'"); return std::nullopt; }
    cfg.feedback_source = *s;
  }
  if (auto v = p.take_string("teacher_mode")) {
    if (*v == "ema") cfg.teacher_mode = TeacherMode::ema;
    else if (*v == "current") cfg.teacher_mode = TeacherMode::current;
    else if (*v == "initial") cfg.teacher_mode = TeacherMode::initial;
    else { fail(err, "teacher_mode", "unknown mode '" + *v + "'"); return std::nullopt; }
  }
  if (auto v = p.take_string("init_scheme")) {
    if (*v == "structured") cfg.init_scheme = InitScheme::structured;
    else if (*v == "uniform") cfg.init_scheme = InitScheme::uniform;
    else { fail(err, "init_scheme", "unknown scheme '" + *v + "'"); return std::nullopt; }
  }

  if (!p.take_int("code_length", &cfg.code_length)) return std::nullopt;
  if (!p.take_int("alphabet_size", &cfg.alphabet_size)) return std::nullopt;
  if (!p.take_int("min_calls", &cfg.min_calls)) return std::nullopt;
  if (!p.take_int("max_calls", &cfg.max_calls)) return std::nullopt;
  if (!p.take_int("max_credentials", &cfg.max_credentials)) return std::nullopt;
  if (!p.take_int("horizon", &cfg.horizon)) return std::nullopt;
  if (!p.take_int("act_pool", &cfg.act_pool)) return std::nullopt;
  if (!p.take_int("login_pool", &cfg.login_pool)) return std::nullopt;
  if (!p.take_int("cred_pool", &cfg.cred_pool)) return std::nullopt;
  if (!p.take_int("train_tasks", &cfg.train_tasks)) return std::nullopt;
  if (!p.take_int("eval_tasks", &cfg.eval_tasks)) return std::nullopt;
  if (!p.take_u64("task_seed", &cfg.task_seed)) return std::nullopt;
  if (!p.take_int("embed_dim", &cfg.embed_dim)) return std::nullopt;
  if (!p.take_int("hidden_dim", &cfg.hidden_dim)) return std::nullopt;
  if (!p.take_double("init_scale", &cfg.init_scale)) return std::nullopt;
  if (!p.take_double("recurrent_decay", &cfg.recurrent_decay)) return std::nullopt;
  if (!p.take_double("head_gain", &cfg.head_gain)) return std::nullopt;
  if (!p.take_int("max_action_tokens", &cfg.max_action_tokens)) return std::nullopt;
  if (!p.take_int("rollouts_per_task", &cfg.rollouts_per_task)) return std::nullopt;
  if (!p.take_int("epochs", &cfg.epochs)) return std::nullopt;
  if (!p.take_int("max_feedback_steps", &cfg.max_feedback_steps)) return std::nullopt;
  if (!p.take_double("ema_rate", &cfg.ema_rate)) return std::nullopt;
  if (!p.take_double("learning_rate", &cfg.learning_rate)) return std::nullopt;
  if (!p.take_double("dense_pg_beta", &cfg.dense_pg_beta)) return std::nullopt;
  if (!p.take_int("sft_candidates", &cfg.sft_candidates)) return std::nullopt;
  if (!p.take_double("sft_feedback_prob", &cfg.sft_feedback_prob)) return std::nullopt;
  if (!p.take_int("eval_rollouts", &cfg.eval_rollouts)) return std::nullopt;
  if (!p.take_u64("base_seed", &cfg.base_seed)) return std::nullopt;
  if (!p.take_bool("record_wall_ms", &cfg.record_wall_ms)) return std::nullopt;

  if (!p.kv.empty()) {
    fail(err, p.kv.begin()->first, "unknown config key");
    return std::nullopt;
  }

  // field validation
  auto bad = [&](const std::string& f, const std::string& m) {
    fail(err, f, m);
    return std::optional<ExperimentConfig>{};
  };
  if (cfg.rollouts_per_task < 1) return bad("rollouts_per_task", "G must be >= 1");
  if (cfg.max_feedback_steps < 1) return bad("max_feedback_steps", "K must be >= 1");
  if (cfg.ema_rate < 0.0 || cfg.ema_rate > 1.0) return bad("ema_rate", "eta must lie in [0, 1]");
  if (cfg.embed_dim < 1 || cfg.hidden_dim < 1) return bad("embed_dim", "dimensions must be positive");
  if (cfg.epochs < 0) return bad("epochs", "epochs must be >= 0");
  if (cfg.train_tasks < 1) return bad("train_tasks", "need at least one train task");
  if (cfg.eval_tasks < 0) return bad("eval_tasks", "eval_tasks must be >= 0");
  if (cfg.eval_rollouts < 1) return bad("eval_rollouts", "k must be >= 1");
  if (cfg.learning_rate <= 0.0) return bad("learning_rate", "must be positive");
  if (cfg.init_scale <= 0.0) return bad("init_scale", "must be positive");
  if (cfg.head_gain <= 0.0) return bad("head_gain", "must be positive");
  if (cfg.max_action_tokens != 0 && cfg.max_action_tokens < 2)
    return bad("max_action_tokens", "need room for the EOS terminator (>= 2)");
  if (cfg.sft_candidates < 1) return bad("sft_candidates", "must be >= 1");
  if (cfg.sft_feedback_prob < 0.0 || cfg.sft_feedback_prob > 1.0)
    return bad("sft_feedback_prob", "must lie in [0, 1]");
  if (cfg.env == EnvId::codelock) {
    if (cfg.code_length < 1) return bad("code_length", "L must be >= 1");
    if (cfg.alphabet_size < 1) return bad("alphabet_size", "V_a must be >= 1");
  } else {
    if (cfg.min_calls < 2) return bad("min_calls", "chains need >= 2 calls");
    if (cfg.max_calls < cfg.min_calls) return bad("max_calls", "must be >= min_calls");
    if (cfg.max_credentials < 1) return bad("max_credentials", "must be >= 1");
    if (cfg.max_credentials > cfg.max_calls - 1)
      return bad("max_credentials", "must leave room for non-login calls");
    if (cfg.horizon < cfg.max_calls + 1)
      return bad("horizon", "must exceed max_calls so corrected replays can finish");
    if (cfg.horizon > 16) return bad("horizon", "toolchain horizon is capped at 16");
    if (cfg.login_pool < cfg.max_credentials)
      return bad("login_pool", "must cover max_credentials distinct logins");
    if (cfg.act_pool < cfg.max_calls) return bad("act_pool", "must cover max_calls calls");
    if (cfg.cred_pool < cfg.max_credentials)
      return bad("cred_pool", "must cover max_credentials distinct credentials");
  }
  return cfg;
}

std::optional<ExperimentConfig> load_config(const std::string& path,
                                            ConfigError* err) {
  std::ifstream in(path);
  if (!in) {
    fail(err, "config", "cannot open '" + path + "'");
    return std::nullopt;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), err);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "env = " << to_string(c.env) << "\n";
  o << "code_length = " << c.code_length << "\n";
  o << "alphabet_size = " << c.alphabet_size << "\n";
  o << "min_calls = " << c.min_calls << "\n";
  o << "max_calls = " << c.max_calls << "\n";
  o << "max_credentials = " << c.max_credentials << "\n";
  o << "horizon = " << c.horizon << "\n";
  o << "act_pool = " << c.act_pool << "\n";
  o << "login_pool = " << c.login_pool << "\n";
  o << "cred_pool = " << c.cred_pool << "\n";
  o << "train_tasks = " << c.train_tasks << "\n";
  o << "eval_tasks = " << c.eval_tasks << "\n";
  o << "task_seed = " << c.task_seed << "\n";
  o << "embed_dim = " << c.embed_dim << "\n";
  o << "hidden_dim = " << c.hidden_dim << "\n";
  o << "init_scheme = " << to_string(c.init_scheme) << "\n";
  o << "init_scale = " << c.init_scale << "\n";
  o << "recurrent_decay = " << c.recurrent_decay << "\n";
  o << "head_gain = " << c.head_gain << "\n";
  o << "max_action_tokens = " << c.max_action_tokens << "\n";
  o << "method = " << to_string(c.method) << "\n";
  o << "rollouts_per_task = " << c.rollouts_per_task << "\n";
  o << "epochs = " << c.epochs << "\n";
  o << "max_feedback_steps = " << c.max_feedback_steps << "\n";
  o << "ema_rate = " << c.ema_rate << "\n";
  o << "learning_rate = " << c.learning_rate << "\n";
  o << "dense_pg_beta = " << c.dense_pg_beta << "\n";
  o << "feedback_source = " << to_string(c.feedback_source) << "\n";
  o << "teacher_mode = " << to_string(c.teacher_mode) << "\n";
  o << "sft_candidates = " << c.sft_candidates << "\n";
  o << "sft_feedback_prob = " << c.sft_feedback_prob << "\n";
  o << "eval_rollouts = " << c.eval_rollouts << "\n";
  o << "base_seed = " << c.base_seed << "\n";
  o << "record_wall_ms = " << (c.record_wall_ms ? "true" : "false") << "\n";
  return o.str();
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  // FNV-1a over the canonical serialization
  const std::string s = serialize_config(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace refocus
