#pragma once

#include <vector>

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/outer_solver.hpp"
#include "bbm/problem.hpp"

namespace bbm {

struct PathRound {
  int i = 0;
  double t = 0;
  double eps = 0;
  RunResult result;
};

struct PathTrace {
  std::vector<PathRound> rounds;
  RunStatus status = RunStatus::BudgetExhausted;
};

/// Runs the outer solver with t and eps halved every round, warm-starting
/// both levels from the previous round.
inline PathTrace run_pathfollow(const BilevelProblem& prob, const Vector& x0,
                                double t0, double eps0, int rounds,
                                int max_outer_per_round, OuterOptions opts = {},
                                BallRate ball_rate = BallRate::Conservative) {
  if (rounds < 1) throw Error(ErrorCode::InvalidArgument, "rounds must be >= 1");
  if (!(eps0 > 0)) throw Error(ErrorCode::InvalidArgument, "eps0 must be positive");
  PathTrace trace;
  Vector x = x0;
  double t = t0;
  double eps = eps0;
  for (int i = 0; i < rounds; ++i) {
    BarrierContext ctx(prob, t, ball_rate);
    PathRound round{i, t, eps, run_bfbm(ctx, x, eps, max_outer_per_round, opts)};
    trace.status = round.result.status;
    const bool failed = round.result.status == RunStatus::Failed;
    x = round.result.x_out;
    if (round.result.last_y) opts.warm_y = round.result.last_y;
    trace.rounds.push_back(std::move(round));
    if (failed) break;
    t *= 0.5;
    eps *= 0.5;
  }
  return trace;
}

}  // namespace bbm
