#include "refocus/train.hpp"

#include <chrono>
#include <cmath>
#include <utility>

namespace refocus {
namespace {

bool same_turns(const Trajectory& a, const Trajectory& b) {
  if (a.turns.size() != b.turns.size()) return false;
  for (size_t i = 0; i < a.turns.size(); ++i) {
    if (a.turns[i].state != b.turns[i].state) return false;
    if (a.turns[i].action != b.turns[i].action) return false;
  }
  return true;
}

// Demonstration selection: draw up to `candidates` trajectories from the
// generator, keep the first success, otherwise the best reward. The generator
// here is the environment's canonical policy, so the first candidate wins.
std::vector<Trajectory> generate_demonstrations(const World& world,
                                                const std::vector<int>& tasks,
                                                int candidates) {
  std::vector<Trajectory> demos;
  demos.reserve(tasks.size());
  for (int task : tasks) {
    Trajectory best;
    bool have = false;
    for (int c = 0; c < candidates; ++c) {
      Trajectory cand = canonical_rollout(world, task);
      if (!have || cand.terminal_reward > best.terminal_reward) {
        best = cand;
        have = true;
      }
      if (best.success) break;
    }
    demos.push_back(std::move(best));
  }
  return demos;
}

// Feedback-literacy augmentation for SFT demonstrations: with probability p
// per turn, splice the oracle correction quote for that turn's own action
// between the observation and the action, exactly where the placement
// experiment later inserts it. The cross-entropy targets are unchanged; the
// policy merely learns that an adjacent quote names the action to take.
void augment_demos_with_feedback(std::vector<Trajectory>* demos, double p,
                                 Rng rng) {
  for (Trajectory& traj : *demos) {
    for (Turn& turn : traj.turns) {
      if (rng.uniform(0.0, 1.0) >= p) continue;
      turn.state.push_back(Vocab::kFbBegin);
      turn.state.push_back(Vocab::kCorrectIs);
      for (Token tok : turn.action) {
        if (tok == Vocab::kEos) break;
        turn.state.push_back(tok);
      }
      turn.state.push_back(Vocab::kFbEnd);
    }
  }
}

const PolicyParameters& teacher_for(TeacherMode mode,
                                    const PolicyParameters& student,
                                    const PolicyParameters& ema,
                                    const PolicyParameters& initial) {
  switch (mode) {
    case TeacherMode::current: return student;
    case TeacherMode::initial: return initial;
    case TeacherMode::ema: break;
  }
  return ema;
}

}  // namespace

AdamState AdamState::init(const PolicyParameters& like) {
  AdamState st;
  st.m = PolicyParameters::zeros(like.vocab_size(), like.embed_dim(),
                                 like.hidden_dim());
  st.v = PolicyParameters::zeros(like.vocab_size(), like.embed_dim(),
                                 like.hidden_dim());
  return st;
}

void adam_step(PolicyParameters* params, AdamState* state,
               const PolicyParameters& grads, double lr, double beta1,
               double beta2, double eps) {
  ++state->t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state->t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state->t));
  for (auto field : PolicyParameters::fields()) {
    Tensor& p = params->*field;
    Tensor& m = state->m.*field;
    Tensor& v = state->v.*field;
    const Tensor& g = grads.*field;
    for (size_t i = 0; i < p.v.size(); ++i) {
      m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * g.v[i];
      v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      p.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double global_grad_norm(const PolicyParameters& grads) {
  double ss = 0.0;
  for (auto field : PolicyParameters::fields())
    for (double g : (grads.*field).v) ss += g * g;
  return std::sqrt(ss);
}

int RolloutBatch::total() const {
  int n = 0;
  for (const auto& g : groups) n += static_cast<int>(g.size());
  return n;
}

int RolloutBatch::failure_count() const {
  int n = 0;
  for (const auto& g : groups)
    for (const Trajectory& t : g) n += t.success ? 0 : 1;
  return n;
}

RolloutBatch collect_rollouts(const PolicyParameters& params, const World& world,
                              const std::vector<int>& tasks, int rollouts_per_task,
                              Rng rng) {
  if (rollouts_per_task < 1)
    throw std::invalid_argument("collect_rollouts: rollouts_per_task < 1");
  RolloutBatch batch;
  batch.task_indices = tasks;
  batch.groups.resize(tasks.size());
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    Rng task_rng = rng.derive(ti);
    batch.groups[ti].reserve(rollouts_per_task);
    for (int g = 0; g < rollouts_per_task; ++g)
      batch.groups[ti].push_back(
          policy_rollout(params, world, tasks[ti], task_rng.derive(g)));
  }
  return batch;
}

std::vector<FailureRef> unique_failures(const RolloutBatch& batch) {
  std::vector<FailureRef> out;
  for (size_t gi = 0; gi < batch.groups.size(); ++gi) {
    std::vector<const Trajectory*> kept;
    for (const Trajectory& traj : batch.groups[gi]) {
      if (traj.success) continue;
      bool dup = false;
      for (const Trajectory* k : kept) dup = dup || same_turns(*k, traj);
      if (dup) continue;
      kept.push_back(&traj);
      out.push_back(FailureRef{batch.task_indices[gi], &traj});
    }
  }
  return out;
}

TrainResult train(const ExperimentConfig& cfg) {
  World world(cfg);
  const Vocab& vocab = world.vocab();
  Rng run_rng(cfg.base_seed);
  const Rng collect_phase = run_rng.derive(0);
  const Rng eval_phase = run_rng.derive(1);

  PolicyParameters student = init_policy(vocab, cfg, run_rng.derive(2));
  const PolicyParameters initial = student;
  PolicyParameters ema = student;
  AdamState opt = AdamState::init(student);

  TrainResult res;
  res.best = student;
  res.final_params = student;
  res.teacher = ema;

  const std::vector<int> train_tasks = world.train_task_indices();
  const std::vector<int> eval_tasks = world.eval_task_indices();
  const ReportVariant variant = cfg.method == Method::refocus_single
                                    ? ReportVariant::single
                                    : ReportVariant::multi;

  std::vector<Trajectory> demos;
  if (cfg.method == Method::sft) {
    demos = generate_demonstrations(world, train_tasks, cfg.sft_candidates);
    if (cfg.sft_feedback_prob > 0.0)
      augment_demos_with_feedback(&demos, cfg.sft_feedback_prob,
                                  run_rng.derive(5));
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    RolloutBatch batch = collect_rollouts(student, world, train_tasks,
                                          cfg.rollouts_per_task,
                                          collect_phase.derive(epoch));
    std::vector<FailureRef> failures = unique_failures(batch);

    // analyzer output per unique failure, keyed by trajectory pointer
    std::vector<std::pair<const Trajectory*, HindsightReport>> analyzed;

    LossResult loss;
    switch (cfg.method) {
      case Method::refocus_single:
      case Method::refocus_multi: {
        std::vector<SupervisionSpan> spans;
        for (const FailureRef& f : failures) {
          HindsightReport report =
              analyze(world, f.task_index, *f.traj, cfg.feedback_source,
                      variant, cfg.max_feedback_steps);
          std::vector<SupervisionSpan> s = build_spans(*f.traj, report);
          spans.insert(spans.end(), s.begin(), s.end());
          analyzed.emplace_back(f.traj, std::move(report));
        }
        loss = refocus_loss(student,
                            teacher_for(cfg.teacher_mode, student, ema, initial),
                            spans, vocab);
        break;
      }
      case Method::sft:
        loss = sft_loss(student, demos, vocab);
        break;
      case Method::grpo:
        loss = grpo_loss(student, batch.groups, vocab);
        break;
      case Method::fulltraj_distill: {
        std::vector<FullTrajExample> examples;
        for (const FailureRef& f : failures) {
          HindsightReport report =
              analyze(world, f.task_index, *f.traj, cfg.feedback_source,
                      ReportVariant::multi, cfg.max_feedback_steps);
          FullTrajExample ex;
          ex.traj = *f.traj;
          for (const FeedbackItem& item : report.items)
            ex.global_feedback.insert(ex.global_feedback.end(),
                                      item.feedback.begin(),
                                      item.feedback.end());
          examples.push_back(std::move(ex));
          analyzed.emplace_back(f.traj, std::move(report));
        }
        loss = fulltraj_distill_loss(
            student, teacher_for(cfg.teacher_mode, student, ema, initial),
            examples, vocab);
        break;
      }
      case Method::denseturn_distill: {
        std::vector<Trajectory> fails;
        for (const FailureRef& f : failures) fails.push_back(*f.traj);
        loss = denseturn_distill_loss(
            student, teacher_for(cfg.teacher_mode, student, ema, initial),
            fails, vocab, cfg.dense_pg_beta);
        break;
      }
    }

    TrainStepReport report;
    report.epoch = epoch;
    report.method = cfg.method;
    report.skipped = loss.skipped;
    if (!loss.skipped) {
      if (!std::isfinite(loss.loss) || !loss.grads.all_finite()) {
        res.diverged = true;
        res.divergence_note = "non-finite loss or gradient at epoch " +
                              std::to_string(epoch) +
                              " (loss=" + std::to_string(loss.loss) + ")";
      } else {
        adam_step(&student, &opt, loss.grads, cfg.learning_rate);
        if (!student.all_finite()) {
          res.diverged = true;
          res.divergence_note =
              "non-finite parameters after the optimizer step at epoch " +
              std::to_string(epoch);
        }
      }
      report.loss = loss.loss;
      report.supervised_tokens = loss.supervised_tokens;
      report.spans = loss.spans_used;
      report.grad_norm = global_grad_norm(loss.grads);
    }
    if (res.diverged) {
      res.reports.push_back(report);
      break;
    }

    ema_update(&ema, student, cfg.ema_rate);

    EvalResult eval_res =
        evaluate(student, world, eval_tasks, cfg.eval_rollouts,
                 eval_phase.derive(epoch));
    report.avg_at_k = eval_res.avg_at_k;
    report.best_at_k = eval_res.best_at_k;
    if (cfg.record_wall_ms) {
      const auto t1 = std::chrono::steady_clock::now();
      report.wall_ms = static_cast<long>(
          std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
    }
    res.reports.push_back(report);

    if (eval_res.avg_at_k > res.best_avg) {
      res.best_avg = eval_res.avg_at_k;
      res.best_best = eval_res.best_at_k;
      res.best = student;
      res.best_epoch = epoch;
    }

    for (size_t gi = 0; gi < batch.groups.size(); ++gi) {
      for (Trajectory& traj : batch.groups[gi]) {
        LogRecord rec;
        for (auto& [ptr, rep] : analyzed)
          if (ptr == &traj) rec.hindsight = rep;
        rec.traj = std::move(traj);
        res.log.push_back(std::move(rec));
      }
    }
  }

  res.final_params = student;
  res.teacher = ema;
  return res;
}

std::vector<AblationRow> source_ablation(const ExperimentConfig& cfg) {
  struct Setting {
    const char* label;
    FeedbackSource source;
    TeacherMode mode;
  };
  const Setting settings[] = {
      {"oracle-ema", FeedbackSource::oracle, TeacherMode::ema},
      {"environment", FeedbackSource::environment, TeacherMode::ema},
      {"initial-teacher", FeedbackSource::oracle, TeacherMode::initial},
  };
  std::vector<AblationRow> rows;
  for (const Setting& s : settings) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.feedback_source = s.source;
    run_cfg.teacher_mode = s.mode;
    TrainResult res = train(run_cfg);
    World world(run_cfg);
    EvalResult final_eval = evaluate(
        res.best, world, world.eval_task_indices(), run_cfg.eval_rollouts,
        Rng(run_cfg.base_seed).derive(1).derive(run_cfg.epochs + 1));
    rows.push_back(AblationRow{s.label, final_eval.avg_at_k, final_eval.best_at_k});
  }
  return rows;
}

}  // namespace refocus
