#include "refocus/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace refocus {
namespace {

struct LegalSet {
  std::vector<int> ids;     // legal token ids in vocab order
  std::vector<int> pos_of;  // vocab-sized map token -> index in ids, -1 if illegal

  explicit LegalSet(const Vocab& vocab) : pos_of(vocab.size(), -1) {
    for (Token t : vocab.legal_actions()) {
      pos_of[t] = static_cast<int>(ids.size());
      ids.push_back(t);
    }
  }

  int index(Token t) const {
    if (t < 0 || t >= static_cast<int>(pos_of.size()) || pos_of[t] < 0)
      throw std::invalid_argument("losses: action token outside the legal set");
    return pos_of[t];
  }
};

// Shared machinery for one optimizer step: a single tape holding the student
// parameters, an accumulating chain of per-position scalar loss nodes, and a
// no-gradient forward path for the teacher. Teacher parameters never touch
// the tape, so there is no adjoint storage their values could flow into.
class LossBuilder {
 public:
  LossBuilder(const PolicyParameters& student, const Vocab& vocab)
      : student_(student), legal_(vocab), tp_(TapePolicy::attach(&tape_, student)) {}

  // student side (tape)
  NodeId fresh_state() { return tp_.initial_state(); }
  NodeId consume(NodeId h, Token tok) { return tp_.step(h, tok); }
  NodeId consume(NodeId h, const TokenSequence& seq) {
    for (Token tok : seq) h = tp_.step(h, tok);
    return h;
  }
  NodeId legal_logits(NodeId h) { return tape_.gather(tp_.logits(h), legal_.ids); }
  NodeId nll(NodeId h, Token target) {
    NodeId ls = tape_.log_softmax(legal_logits(h));
    return tape_.scale(tape_.pick(ls, legal_.index(target)), -1.0);
  }
  NodeId logprob(NodeId h, Token target) {
    NodeId ls = tape_.log_softmax(legal_logits(h));
    return tape_.pick(ls, legal_.index(target));
  }
  NodeId kl_to(NodeId h, const Tensor& teacher_legal_logits) {
    return tape_.reverse_kl(legal_logits(h), teacher_legal_logits);
  }

  // teacher side (plain forward evaluation)
  PolicyState teacher_start(const PolicyParameters& teacher,
                            const TokenSequence& context) const {
    PolicyState st = initial_state(teacher);
    for (Token tok : context) advance_state(teacher, tok, &st);
    return st;
  }
  Tensor teacher_legal(const PolicyParameters& teacher,
                       const PolicyState& st) const {
    std::vector<double> logits;
    state_logits(teacher, st, &logits);
    std::vector<double> out(legal_.ids.size());
    for (size_t i = 0; i < legal_.ids.size(); ++i) out[i] = logits[legal_.ids[i]];
    return Tensor::vector(std::move(out));
  }

  void add_term(int traj_index, int step, int pos, NodeId term) {
    record_.push_back(TokenLoss{traj_index, step, pos, tape_.value(term).v[0]});
    acc_ = acc_ < 0 ? term : tape_.add(acc_, term);
    ++count_;
  }

  NodeId scale(NodeId x, double c) { return tape_.scale(x, c); }
  NodeId add(NodeId a, NodeId b) { return tape_.add(a, b); }

  LossResult finalize(int spans_used) {
    LossResult out;
    out.spans_used = spans_used;
    if (count_ == 0) {
      out.skipped = true;
      out.grads = PolicyParameters::zeros(
          student_.vocab_size(), student_.embed_dim(), student_.hidden_dim());
      return out;
    }
    NodeId mean = tape_.scale(acc_, 1.0 / static_cast<double>(count_));
    tape_.backward(mean);
    out.loss = tape_.value(mean).v[0];
    out.grads = tp_.grads();
    out.supervised_tokens = count_;
    out.per_token = std::move(record_);
    return out;
  }

 private:
  const PolicyParameters& student_;
  LegalSet legal_;
  Tape tape_;
  TapePolicy tp_;
  NodeId acc_ = -1;
  long count_ = 0;
  std::vector<TokenLoss> record_;
};

// Per-turn verdict of the dense baseline. Turns 1..T-1 read the stored next
// observation; the final turn's observation was dropped at collection time,
// so its verdict comes from the terminal reward.
bool turn_ok(const Trajectory& traj, int step) {
  if (step < traj.length()) {
    const TokenSequence& next_obs = traj.turns[step].state;
    return std::find(next_obs.begin(), next_obs.end(), Vocab::kErr) ==
           next_obs.end();
  }
  return traj.success;
}

// The dense judge's feedback block for one turn: the next observation echoed
// verbatim, or the bare verdict for the final turn.
TokenSequence dense_feedback(const Trajectory& traj, int step) {
  TokenSequence fb{Vocab::kFbBegin};
  if (step < traj.length()) {
    const TokenSequence& next_obs = traj.turns[step].state;
    fb.insert(fb.end(), next_obs.begin(), next_obs.end());
  } else {
    fb.push_back(traj.success ? Vocab::kOk : Vocab::kErr);
  }
  fb.push_back(Vocab::kFbEnd);
  return fb;
}

}  // namespace

LossResult refocus_loss(const PolicyParameters& student,
                        const PolicyParameters& teacher,
                        const std::vector<SupervisionSpan>& spans,
                        const Vocab& vocab) {
  LossBuilder b(student, vocab);
  for (const SupervisionSpan& span : spans) {
    NodeId h = b.consume(b.fresh_state(), span.student_context);
    PolicyState tst = b.teacher_start(teacher, span.teacher_context);
    for (int pos = 0; pos < static_cast<int>(span.action.size()); ++pos) {
      b.add_term(0, span.step, pos, b.kl_to(h, b.teacher_legal(teacher, tst)));
      h = b.consume(h, span.action[pos]);
      advance_state(teacher, span.action[pos], &tst);
    }
  }
  return b.finalize(static_cast<int>(spans.size()));
}

LossResult sft_loss(const PolicyParameters& student,
                    const std::vector<Trajectory>& demonstrations,
                    const Vocab& vocab) {
  if (demonstrations.empty())
    throw std::invalid_argument("sft_loss: empty demonstration set");
  LossBuilder b(student, vocab);
  int spans = 0;
  for (size_t d = 0; d < demonstrations.size(); ++d) {
    const Trajectory& traj = demonstrations[d];
    NodeId h = b.fresh_state();
    for (int i = 1; i <= traj.length(); ++i) {
      h = b.consume(h, traj.turns[i - 1].state);
      const TokenSequence& action = traj.turns[i - 1].action;
      for (int pos = 0; pos < static_cast<int>(action.size()); ++pos) {
        b.add_term(static_cast<int>(d), i, pos, b.nll(h, action[pos]));
        h = b.consume(h, action[pos]);
      }
      ++spans;
    }
  }
  return b.finalize(spans);
}

LossResult grpo_loss(const PolicyParameters& student,
                     const std::vector<std::vector<Trajectory>>& groups,
                     const Vocab& vocab) {
  LossBuilder b(student, vocab);
  int spans = 0;
  int traj_index = 0;
  for (const std::vector<Trajectory>& group : groups) {
    double mean = 0.0;
    for (const Trajectory& t : group) mean += t.terminal_reward;
    mean /= static_cast<double>(group.size());
    double var = 0.0;
    for (const Trajectory& t : group) {
      const double d = t.terminal_reward - mean;
      var += d * d;
    }
    var /= static_cast<double>(group.size());
    if (var == 0.0) {  // equal rewards carry no relative signal
      traj_index += static_cast<int>(group.size());
      continue;
    }
    const double stddev = std::sqrt(var);
    for (const Trajectory& traj : group) {
      const double adv = (traj.terminal_reward - mean) / stddev;
      NodeId h = b.fresh_state();
      for (int i = 1; i <= traj.length(); ++i) {
        h = b.consume(h, traj.turns[i - 1].state);
        const TokenSequence& action = traj.turns[i - 1].action;
        for (int pos = 0; pos < static_cast<int>(action.size()); ++pos) {
          b.add_term(traj_index, i, pos, b.scale(b.logprob(h, action[pos]), -adv));
          h = b.consume(h, action[pos]);
        }
        ++spans;
      }
      ++traj_index;
    }
  }
  return b.finalize(spans);
}

LossResult fulltraj_distill_loss(const PolicyParameters& student,
                                 const PolicyParameters& teacher,
                                 const std::vector<FullTrajExample>& examples,
                                 const Vocab& vocab) {
  LossBuilder b(student, vocab);
  int spans = 0;
  for (size_t e = 0; e < examples.size(); ++e) {
    const Trajectory& traj = examples[e].traj;
    NodeId h = b.fresh_state();
    PolicyState tst = b.teacher_start(teacher, examples[e].global_feedback);
    for (int i = 1; i <= traj.length(); ++i) {
      h = b.consume(h, traj.turns[i - 1].state);
      for (Token tok : traj.turns[i - 1].state) advance_state(teacher, tok, &tst);
      const TokenSequence& action = traj.turns[i - 1].action;
      for (int pos = 0; pos < static_cast<int>(action.size()); ++pos) {
        b.add_term(static_cast<int>(e), i, pos,
                   b.kl_to(h, b.teacher_legal(teacher, tst)));
        h = b.consume(h, action[pos]);
        advance_state(teacher, action[pos], &tst);
      }
      ++spans;
    }
  }
  return b.finalize(spans);
}

LossResult denseturn_distill_loss(const PolicyParameters& student,
                                  const PolicyParameters& teacher,
                                  const std::vector<Trajectory>& failures,
                                  const Vocab& vocab, double beta) {
  LossBuilder b(student, vocab);
  int spans = 0;
  for (size_t e = 0; e < failures.size(); ++e) {
    const Trajectory& traj = failures[e];
    NodeId h = b.fresh_state();
    for (int i = 1; i <= traj.length(); ++i) {
      const double reward = turn_ok(traj, i) ? 1.0 : -1.0;
      FeedbackItem item{i, dense_feedback(traj, i)};
      PolicyState tst =
          b.teacher_start(teacher, flatten_context(traj, i, &item));

      h = b.consume(h, traj.turns[i - 1].state);
      const TokenSequence& action = traj.turns[i - 1].action;
      for (int pos = 0; pos < static_cast<int>(action.size()); ++pos) {
        NodeId term = b.kl_to(h, b.teacher_legal(teacher, tst));
        if (beta != 0.0)
          term = b.add(term, b.scale(b.logprob(h, action[pos]), -reward * beta));
        b.add_term(static_cast<int>(e), i, pos, term);
        h = b.consume(h, action[pos]);
        advance_state(teacher, action[pos], &tst);
      }
      ++spans;
    }
  }
  return b.finalize(spans);
}

}  // namespace refocus
