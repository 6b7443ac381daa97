#include "refocus/trajectory.hpp"

#include <stdexcept>

namespace refocus {

std::string to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::oracle: return "oracle";
    case FeedbackSource::heuristic: return "heuristic";
    case FeedbackSource::environment: return "environment";
  }
  return "oracle";
}

std::string to_string(ReportVariant v) {
  return v == ReportVariant::single ? "single" : "multi";
}

std::optional<FeedbackSource> feedback_source_from(const std::string& s) {
  if (s == "oracle") return FeedbackSource::oracle;
  if (s == "heuristic") return FeedbackSource::heuristic;
  if (s == "environment") return FeedbackSource::environment;
  return std::nullopt;
}

std::optional<ReportVariant> report_variant_from(const std::string& s) {
  if (s == "single") return ReportVariant::single;
  if (s == "multi") return ReportVariant::multi;
  return std::nullopt;
}

TokenSequence flatten_context(const Trajectory& traj, int step,
                              const FeedbackItem* feedback) {
  if (step < 1 || step > traj.length())
    throw std::out_of_range("flatten_context: step out of [1, T]");
  if (feedback && feedback->step != step)
    throw std::invalid_argument("flatten_context: feedback.step != step");

  TokenSequence out;
  for (int t = 1; t < step; ++t) {
    const Turn& turn = traj.turns[t - 1];
    out.insert(out.end(), turn.state.begin(), turn.state.end());
    out.insert(out.end(), turn.action.begin(), turn.action.end());
  }
  const Turn& here = traj.turns[step - 1];
  out.insert(out.end(), here.state.begin(), here.state.end());
  if (feedback)
    out.insert(out.end(), feedback->feedback.begin(), feedback->feedback.end());
  return out;
}

namespace {

bool well_formed_feedback(const TokenSequence& fb, const Vocab& vocab) {
  // [<fb>, interior..., </fb>] with non-empty interior. Interior tokens may be
  // feedback/action/observation role or the ERR marker (analyzers quote error
  // observations); the sequence-control ids never appear inside.
  if (fb.size() < 3) return false;
  if (fb.front() != Vocab::kFbBegin || fb.back() != Vocab::kFbEnd) return false;
  for (size_t i = 1; i + 1 < fb.size(); ++i) {
    Token t = fb[i];
    if (!vocab.valid(t)) return false;
    if (t == Vocab::kErr) continue;
    Role r = vocab.role(t);
    if (r == Role::control) return false;
  }
  return true;
}

}  // namespace

bool validate_report(const HindsightReport& report, const Trajectory& traj,
                     int max_steps, const Vocab& vocab) {
  const int n = static_cast<int>(report.items.size());
  if (n < 1 || n > max_steps) return false;
  if (report.variant == ReportVariant::single && n != 1) return false;
  int prev = 0;
  for (const FeedbackItem& item : report.items) {
    if (item.step <= prev || item.step > traj.length()) return false;
    prev = item.step;
    if (!well_formed_feedback(item.feedback, vocab)) return false;
  }
  return true;
}

}  // namespace refocus
