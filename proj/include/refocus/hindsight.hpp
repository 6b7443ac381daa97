#pragma once

#include <vector>

#include "refocus/env.hpp"
#include "refocus/trajectory.hpp"

namespace refocus {

// One supervised step: the student sees h_i, the teacher sees h_i plus the
// feedback block, and both score the recorded action a_i.
struct SupervisionSpan {
  int step = 0;
  TokenSequence student_context;
  TokenSequence teacher_context;
  TokenSequence action;  // recorded a_i, EOS-terminated
};

// Failure analysis H(tau) -> at most max_steps (step, feedback) items.
//   oracle      ground-truth attribution, truncated to the budget
//   heuristic   steps whose next observation carries the ERR marker; feedback
//               echoes the error class
//   environment same steps as heuristic; feedback is the raw next observation
// A heuristic/environment pass that finds no ERR step falls back to the last
// step with a generic note (the event is logged to clog).
// Precondition: the trajectory failed.
HindsightReport analyze(const World& world, int task_index,
                        const Trajectory& traj, FeedbackSource source,
                        ReportVariant variant, int max_steps);

// One span per report item, ordered by step. Each selected step is treated
// independently: no span's teacher context contains another step's feedback.
std::vector<SupervisionSpan> build_spans(const Trajectory& traj,
                                         const HindsightReport& report);

}  // namespace refocus
