#include "refocus/hindsight.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

namespace refocus {
namespace {

// Steps whose next observation carries the ERR marker, earliest first. The
// outcome of the final turn is not stored (the terminal observation is
// dropped), so the last step can never be flagged; that blind spot is part of
// what separates the local analyzers from the oracle.
std::vector<int> err_steps(const Trajectory& traj) {
  std::vector<int> steps;
  for (int t = 1; t < traj.length(); ++t) {
    const TokenSequence& next_obs = traj.turns[t].state;
    if (std::find(next_obs.begin(), next_obs.end(), Vocab::kErr) != next_obs.end())
      steps.push_back(t);
  }
  return steps;
}

TokenSequence wrap_feedback(TokenSequence inner) {
  TokenSequence fb{Vocab::kFbBegin};
  fb.insert(fb.end(), inner.begin(), inner.end());
  fb.push_back(Vocab::kFbEnd);
  return fb;
}

}  // namespace

HindsightReport analyze(const World& world, int task_index,
                        const Trajectory& traj, FeedbackSource source,
                        ReportVariant variant, int max_steps) {
  if (traj.success) throw std::invalid_argument("analyze: trajectory succeeded");
  if (max_steps < 1) throw std::invalid_argument("analyze: max_steps must be >= 1");

  HindsightReport report;
  report.source = source;
  report.variant = variant;
  const size_t cap =
      variant == ReportVariant::single ? 1 : static_cast<size_t>(max_steps);

  if (source == FeedbackSource::oracle) {
    OracleAttribution attr = oracle_attribution(world, task_index, traj);
    for (const FeedbackItem& item : attr.items) {
      if (report.items.size() == cap) break;
      report.items.push_back(item);
    }
    if (report.items.empty())
      throw std::logic_error("analyze: failed trajectory with empty attribution");
    return report;
  }

  std::vector<int> steps = err_steps(traj);
  if (steps.empty()) {
    std::clog << "hindsight: no ERR step in failed trajectory " << traj.task_id
              << "; falling back to the last step\n";
    report.items.push_back(
        FeedbackItem{traj.length(), wrap_feedback({Vocab::kFbNote})});
    return report;
  }

  for (int step : steps) {
    if (report.items.size() == cap) break;
    const TokenSequence& next_obs = traj.turns[step].state;
    TokenSequence inner;
    if (source == FeedbackSource::environment) {
      inner = next_obs;  // verbatim
    } else {
      inner.push_back(Vocab::kErr);
      // Tool environments place the error class right after the marker.
      if (world.config().env == EnvId::toolchain && next_obs.size() >= 2 &&
          next_obs[0] == Vocab::kErr)
        inner.push_back(next_obs[1]);
    }
    report.items.push_back(FeedbackItem{step, wrap_feedback(std::move(inner))});
  }
  return report;
}

std::vector<SupervisionSpan> build_spans(const Trajectory& traj,
                                         const HindsightReport& report) {
  std::vector<SupervisionSpan> spans;
  spans.reserve(report.items.size());
  for (const FeedbackItem& item : report.items) {
    SupervisionSpan span;
    span.step = item.step;
    span.student_context = flatten_context(traj, item.step);
    span.teacher_context = flatten_context(traj, item.step, &item);
    span.action = traj.turns[item.step - 1].action;
    spans.push_back(std::move(span));
  }
  return spans;
}

}  // namespace refocus
