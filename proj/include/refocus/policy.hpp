#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "refocus/config.hpp"
#include "refocus/rng.hpp"
#include "refocus/tape.hpp"
#include "refocus/vocab.hpp"

namespace refocus {

// theta of the policy: embedding -> single tanh recurrent layer -> linear
// head. The EMA teacher is a second instance of the same shapes.
struct PolicyParameters {
  Tensor embed;  // V x d
  Tensor w_xh;   // h x d
  Tensor w_hh;   // h x h
  Tensor b_h;    // h
  Tensor w_hy;   // V x h
  Tensor b_y;    // V

  int vocab_size() const { return static_cast<int>(embed.rows()); }
  int embed_dim() const { return static_cast<int>(embed.cols()); }
  int hidden_dim() const { return static_cast<int>(b_h.size()); }

  static PolicyParameters zeros(int V, int d, int h);
  bool same_shape(const PolicyParameters& o) const;
  bool all_finite() const;

  // elementwise access to all six tensors in a fixed order, for the
  // optimizer, EMA update, and finite-difference tests
  std::array<Tensor PolicyParameters::*, 6> static fields();
};

struct DecodingLimits {
  int max_action_tokens = 2;  // >= 2; position max is forced EOS
  // temperature is fixed at 1 by design
};

// Default initialization. `structured` ties the head rows to scaled embedding
// rows and sets W_xh ~ [I;0], W_hh ~ gamma*I, giving the untrained policy a
// recency response: reading token c adds roughly
// head_gain * decay^lag * |embed(c)|^2 to c's own logit. That innate response
// is what makes corrective feedback actionable by the feedback-conditioned
// teacher before any learning has happened; with `uniform` (zero head)
// student and teacher distributions are identical and every distillation
// gradient is exactly zero. cfg.head_gain sets how decisive the response is;
// embeddings themselves stay small so the tanh recurrence operates near its
// linear range.
PolicyParameters init_policy(const Vocab& vocab, const ExperimentConfig& cfg,
                             Rng rng);

// Left-to-right recurrent state for the no-gradient paths.
struct PolicyState {
  std::vector<double> h;
};

PolicyState initial_state(const PolicyParameters& p);
void advance_state(const PolicyParameters& p, Token tok, PolicyState* st);
void state_logits(const PolicyParameters& p, const PolicyState& st,
                  std::vector<double>* out);

// Logits after consuming the whole context (empty context = zero state).
Tensor next_logits(const PolicyParameters& p, const TokenSequence& context);

// Masked categorical sampling over action-role tokens + EOS, temperature 1.
// Stops at EOS; at position max_action_tokens EOS is forced, so the result
// always satisfies the Turn invariants.
TokenSequence sample_action(const PolicyParameters& p, const Vocab& vocab,
                            const TokenSequence& context,
                            const DecodingLimits& limits, Rng* rng);

// Per-token conditional log-probs of a recorded action under the masked
// legal-emission distribution; entry t = log pi(action[t] | prefix + action[<t]).
std::vector<double> action_token_logprobs(const PolicyParameters& p,
                                          const Vocab& vocab,
                                          const TokenSequence& prefix,
                                          const TokenSequence& action);

// theta_T <- (1 - eta) * theta_T + eta * theta_S, elementwise.
void ema_update(PolicyParameters* teacher, const PolicyParameters& student,
                double rate);

// Policy graph on a tape; parameters are registered once per tape.
struct TapePolicy {
  Tape* tape = nullptr;
  NodeId embed = -1, w_xh = -1, w_hh = -1, b_h = -1, w_hy = -1, b_y = -1;
  int hidden = 0;

  static TapePolicy attach(Tape* tape, const PolicyParameters& p);
  NodeId initial_state() const;          // constant zero vector [h]
  NodeId step(NodeId h, Token tok) const;
  NodeId logits(NodeId h) const;         // full vocabulary row
  // Copies accumulated gradients into a parameter-shaped holder.
  PolicyParameters grads() const;
};

// Checkpoint: magic, version, config hash, then the six tensors with shapes
// and raw doubles. Reload is bit-exact.
bool save_checkpoint(const std::string& path, const PolicyParameters& p,
                     uint64_t cfg_hash);
std::optional<PolicyParameters> load_checkpoint(const std::string& path,
                                                uint64_t* cfg_hash_out);

}  // namespace refocus
