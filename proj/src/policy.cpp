#include "refocus/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace refocus {

PolicyParameters PolicyParameters::zeros(int V, int d, int h) {
  PolicyParameters p;
  p.embed = Tensor::zeros({static_cast<size_t>(V), static_cast<size_t>(d)});
  p.w_xh = Tensor::zeros({static_cast<size_t>(h), static_cast<size_t>(d)});
  p.w_hh = Tensor::zeros({static_cast<size_t>(h), static_cast<size_t>(h)});
  p.b_h = Tensor::zeros({static_cast<size_t>(h)});
  p.w_hy = Tensor::zeros({static_cast<size_t>(V), static_cast<size_t>(h)});
  p.b_y = Tensor::zeros({static_cast<size_t>(V)});
  return p;
}

std::array<Tensor PolicyParameters::*, 6> PolicyParameters::fields() {
  return {&PolicyParameters::embed, &PolicyParameters::w_xh,
          &PolicyParameters::w_hh, &PolicyParameters::b_h,
          &PolicyParameters::w_hy, &PolicyParameters::b_y};
}

bool PolicyParameters::same_shape(const PolicyParameters& o) const {
  for (auto f : fields())
    if (!(this->*f).same_shape(o.*f)) return false;
  return true;
}

bool PolicyParameters::all_finite() const {
  for (auto f : fields())
    if (!(this->*f).all_finite()) return false;
  return true;
}

PolicyParameters init_policy(const Vocab& vocab, const ExperimentConfig& cfg,
                             Rng rng) {
  const int V = vocab.size(), d = cfg.embed_dim, h = cfg.hidden_dim;
  PolicyParameters p = PolicyParameters::zeros(V, d, h);
  const double s = cfg.init_scale;
  if (cfg.init_scheme == InitScheme::uniform) {
    // plain baseline: random embeddings and recurrent weights, zero head
    for (double& x : p.embed.v) x = rng.uniform(-s, s);
    for (double& x : p.w_xh.v) x = rng.uniform(-s, s);
    for (double& x : p.w_hh.v) x = rng.uniform(-s, s);
    return p;
  }
  // structured: mutually orthogonal token directions, identity input path,
  // decaying identity memory, head rows tied to scaled embedding rows at t=0
  // (separate parameters thereafter). Orthogonality makes the recency readout
  // selective: e_v . h picks out only v's own occurrences, so a recently read
  // token raises its own logit by about gain * decay^lag * |e|^2 with no
  // cross-talk onto other tokens. Row norm matches the expected norm of a
  // U[-s,s] row so init_scale means the same thing in both schemes.
  const double row_norm = s * std::sqrt(d / 3.0);
  for (double& x : p.embed.v) x = rng.uniform(-1.0, 1.0);
  for (int v = 0; v < V; ++v) {
    double* row = &p.embed.v[static_cast<size_t>(v) * d];
    for (int u = 0; u < std::min(v, d); ++u) {
      const double* prev = &p.embed.v[static_cast<size_t>(u) * d];
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += row[j] * prev[j];
      for (int j = 0; j < d; ++j) row[j] -= dot * prev[j];
    }
    double nrm = 0.0;
    for (int j = 0; j < d; ++j) nrm += row[j] * row[j];
    nrm = std::sqrt(nrm);
    // beyond d rows exact orthogonality is impossible; keep the residual
    // direction normalized (near-orthogonal in high dimension)
    for (int j = 0; j < d; ++j) row[j] /= nrm;
  }
  for (double& x : p.embed.v) x *= row_norm;
  const int k = std::min(d, h);
  for (int i = 0; i < k; ++i) p.w_xh.at(i, i) = 1.0;
  for (int i = 0; i < h; ++i) p.w_hh.at(i, i) = cfg.recurrent_decay;
  for (int v = 0; v < V; ++v)
    for (int j = 0; j < k; ++j)
      p.w_hy.at(v, j) = cfg.head_gain * p.embed.at(v, j);
  return p;
}

PolicyState initial_state(const PolicyParameters& p) {
  PolicyState st;
  st.h.assign(p.hidden_dim(), 0.0);
  return st;
}

void advance_state(const PolicyParameters& p, Token tok, PolicyState* st) {
  const int V = p.vocab_size(), d = p.embed_dim(), h = p.hidden_dim();
  if (tok < 0 || tok >= V) throw std::out_of_range("advance_state: token out of range");
  std::vector<double> nh(h);
  const double* x = &p.embed.v[static_cast<size_t>(tok) * d];
  for (int i = 0; i < h; ++i) {
    double acc = p.b_h.v[i];
    const double* wx = &p.w_xh.v[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) acc += wx[j] * x[j];
    const double* wh = &p.w_hh.v[static_cast<size_t>(i) * h];
    for (int j = 0; j < h; ++j) acc += wh[j] * st->h[j];
    nh[i] = std::tanh(acc);
  }
  st->h = std::move(nh);
}

void state_logits(const PolicyParameters& p, const PolicyState& st,
                  std::vector<double>* out) {
  const int V = p.vocab_size(), h = p.hidden_dim();
  out->resize(V);
  for (int v = 0; v < V; ++v) {
    double acc = p.b_y.v[v];
    const double* w = &p.w_hy.v[static_cast<size_t>(v) * h];
    for (int j = 0; j < h; ++j) acc += w[j] * st.h[j];
    (*out)[v] = acc;
  }
}

Tensor next_logits(const PolicyParameters& p, const TokenSequence& context) {
  PolicyState st = initial_state(p);
  for (Token t : context) advance_state(p, t, &st);
  std::vector<double> logits;
  state_logits(p, st, &logits);
  return Tensor::vector(std::move(logits));
}

namespace {

// masked log-softmax over the legal emission set
void legal_logprobs(const std::vector<double>& logits,
                    const std::vector<Token>& legal, std::vector<double>* out) {
  std::vector<double> sub(legal.size());
  for (size_t i = 0; i < legal.size(); ++i) sub[i] = logits[legal[i]];
  stable_log_softmax(sub, out);
}

}  // namespace

TokenSequence sample_action(const PolicyParameters& p, const Vocab& vocab,
                            const TokenSequence& context,
                            const DecodingLimits& limits, Rng* rng) {
  if (limits.max_action_tokens < 2)
    throw std::invalid_argument("sample_action: max_action_tokens must be >= 2");
  const std::vector<Token>& legal = vocab.legal_actions();
  PolicyState st = initial_state(p);
  for (Token t : context) advance_state(p, t, &st);

  TokenSequence action;
  std::vector<double> logits, lp, probs;
  for (int pos = 1; pos <= limits.max_action_tokens; ++pos) {
    if (pos == limits.max_action_tokens) {
      action.push_back(Vocab::kEos);
      break;
    }
    state_logits(p, st, &logits);
    legal_logprobs(logits, legal, &lp);
    probs.resize(lp.size());
    for (size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
    Token tok = legal[rng->categorical(probs)];
    action.push_back(tok);
    if (tok == Vocab::kEos) break;
    advance_state(p, tok, &st);
  }
  return action;
}

std::vector<double> action_token_logprobs(const PolicyParameters& p,
                                          const Vocab& vocab,
                                          const TokenSequence& prefix,
                                          const TokenSequence& action) {
  if (action.empty() || action.back() != Vocab::kEos)
    throw std::invalid_argument("action_token_logprobs: action must end with EOS");
  const std::vector<Token>& legal = vocab.legal_actions();
  PolicyState st = initial_state(p);
  for (Token t : prefix) advance_state(p, t, &st);

  std::vector<double> out;
  std::vector<double> logits, lp;
  for (Token tok : action) {
    state_logits(p, st, &logits);
    legal_logprobs(logits, legal, &lp);
    size_t idx = legal.size();
    for (size_t i = 0; i < legal.size(); ++i)
      if (legal[i] == tok) { idx = i; break; }
    if (idx == legal.size())
      throw std::out_of_range("action_token_logprobs: token not in legal set");
    out.push_back(lp[idx]);
    advance_state(p, tok, &st);
  }
  return out;
}

void ema_update(PolicyParameters* teacher, const PolicyParameters& student,
                double rate) {
  if (!teacher->same_shape(student))
    throw std::invalid_argument("ema_update: shape mismatch");
  for (auto f : PolicyParameters::fields()) {
    Tensor& t = teacher->*f;
    const Tensor& s = student.*f;
    for (size_t i = 0; i < t.size(); ++i)
      t.v[i] = (1.0 - rate) * t.v[i] + rate * s.v[i];
  }
}

TapePolicy TapePolicy::attach(Tape* tape, const PolicyParameters& p) {
  TapePolicy tp;
  tp.tape = tape;
  tp.hidden = p.hidden_dim();
  tp.embed = tape->param(p.embed);
  tp.w_xh = tape->param(p.w_xh);
  tp.w_hh = tape->param(p.w_hh);
  tp.b_h = tape->param(p.b_h);
  tp.w_hy = tape->param(p.w_hy);
  tp.b_y = tape->param(p.b_y);
  return tp;
}

NodeId TapePolicy::initial_state() const {
  return tape->constant(Tensor::zeros({static_cast<size_t>(hidden)}));
}

NodeId TapePolicy::step(NodeId h, Token tok) const {
  NodeId x = tape->embed_lookup(embed, tok);
  NodeId xa = tape->linear(w_xh, -1, x);
  NodeId ha = tape->linear(w_hh, b_h, h);
  return tape->tanh_op(tape->add(xa, ha));
}

NodeId TapePolicy::logits(NodeId h) const { return tape->linear(w_hy, b_y, h); }

PolicyParameters TapePolicy::grads() const {
  PolicyParameters g;
  const NodeId ids[6] = {embed, w_xh, w_hh, b_h, w_hy, b_y};
  auto fs = PolicyParameters::fields();
  for (int i = 0; i < 6; ++i) {
    Tensor t;
    t.shape = tape->value(ids[i]).shape;
    t.v = tape->grad(ids[i]);
    g.*fs[i] = std::move(t);
  }
  return g;
}

namespace {
constexpr uint32_t kMagic = 0x52464b31;  // "RFK1"

void write_tensor(std::ofstream& out, const Tensor& t) {
  uint32_t nd = static_cast<uint32_t>(t.shape.size());
  out.write(reinterpret_cast<const char*>(&nd), sizeof nd);
  for (size_t d : t.shape) {
    uint64_t v = d;
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  out.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

bool read_tensor(std::ifstream& in, Tensor* t) {
  uint32_t nd = 0;
  if (!in.read(reinterpret_cast<char*>(&nd), sizeof nd)) return false;
  if (nd > 2) return false;
  std::vector<size_t> shape(nd);
  size_t n = 1;
  for (uint32_t i = 0; i < nd; ++i) {
    uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) return false;
    if (v == 0 || v > (1u << 24)) return false;
    shape[i] = static_cast<size_t>(v);
    n *= shape[i];
  }
  t->shape = std::move(shape);
  t->v.resize(n);
  return static_cast<bool>(in.read(reinterpret_cast<char*>(t->v.data()),
                                   static_cast<std::streamsize>(n * sizeof(double))));
}
}  // namespace

bool save_checkpoint(const std::string& path, const PolicyParameters& p,
                     uint64_t cfg_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  uint32_t magic = kMagic, version = 1;
  out.write(reinterpret_cast<const char*>(&magic), sizeof magic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&cfg_hash), sizeof cfg_hash);
  for (auto f : PolicyParameters::fields()) write_tensor(out, p.*f);
  return static_cast<bool>(out);
}

std::optional<PolicyParameters> load_checkpoint(const std::string& path,
                                                uint64_t* cfg_hash_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  uint32_t magic = 0, version = 0;
  uint64_t hash = 0;
  if (!in.read(reinterpret_cast<char*>(&magic), sizeof magic)) return std::nullopt;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version)) return std::nullopt;
  if (!in.read(reinterpret_cast<char*>(&hash), sizeof hash)) return std::nullopt;
  if (magic != kMagic || version != 1) return std::nullopt;
  PolicyParameters p;
  for (auto f : PolicyParameters::fields())
    if (!read_tensor(in, &(p.*f))) return std::nullopt;
  if (p.embed.shape.size() != 2 || p.w_hy.shape.size() != 2 ||
      p.w_xh.shape.size() != 2 || p.w_hh.shape.size() != 2 ||
      p.b_h.shape.size() != 1 || p.b_y.shape.size() != 1)
    return std::nullopt;
  if (cfg_hash_out) *cfg_hash_out = hash;
  return p;
}

}  // namespace refocus
