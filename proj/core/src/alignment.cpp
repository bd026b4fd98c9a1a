// Copyright 2026 The safe-align Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safe_align/alignment.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

std::string_view to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::Converged: return "Converged";
    case OutcomeKind::SatisfiedByHuman: return "SatisfiedByHuman";
    case OutcomeKind::Misspecified: return "Misspecified";
    case OutcomeKind::BudgetExhausted: return "BudgetExhausted";
  }
  return "unknown";
}

void AlignmentConfig::validate() const {
  if (c_low.size() != c_high.size() || c_low.size() == 0) {
    fail(ErrorKind::DimensionError, "box bounds must be nonempty and of equal length");
  }
  if (!(c_low.array() < c_high.array()).all()) fail(ErrorKind::EmptyBox, "need c_l < c_h");
  if (!(rho_H > 0)) fail(ErrorKind::InvalidArgument, "rho_H must be positive");
  if (!(epsilon_misspec >= 0)) fail(ErrorKind::InvalidArgument, "epsilon must be >= 0");
  if (max_env_steps < 0) fail(ErrorKind::InvalidArgument, "max_env_steps must be >= 0");
  if (max_emergency_resets < 1) fail(ErrorKind::InvalidArgument, "max_emergency_resets must be >= 1");
  solver.validate();
}

double unit_ball_volume(int r) {
  if (r < 1) fail(ErrorKind::InvalidArgument, "dimension must be >= 1");
  const double half = 0.5 * r;
  return std::exp(half * std::log(M_PI) - std::lgamma(half + 1.0));
}

double budget_exponent(double box_volume, double rho, int r) {
  if (r < 2) fail(ErrorKind::InvalidBudget, "the budget needs r >= 2");
  if (!(box_volume > 0) || !(rho > 0) || !std::isfinite(box_volume) || !std::isfinite(rho)) {
    fail(ErrorKind::InvalidBudget, "box volume and radius must be positive and finite");
  }
  using ld = long double;
  const ld half = static_cast<ld>(r) / 2;
  const ld log_tau = half * std::log(3.141592653589793238462643383279502884L) - std::lgamma(half + 1);
  const ld log_ratio = log_tau + r * std::log(static_cast<ld>(rho)) - std::log(static_cast<ld>(box_volume));
  if (!(log_ratio < 0)) {
    fail(ErrorKind::InvalidBudget, "ball of radius rho is not smaller than the initial box");
  }
  return static_cast<double>(log_ratio / std::log1p(-1.0L / r));
}

int max_corrections(double box_volume, double rho, int r) {
  double k = budget_exponent(box_volume, rho, r);
  // Rounding noise must not push an exact integer over to the next one.
  const double nearest = std::round(k);
  if (std::abs(k - nearest) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(k)) k = nearest;
  const double ceiled = std::ceil(k);
  if (ceiled > std::numeric_limits<int>::max()) fail(ErrorKind::InvalidBudget, "budget overflows int");
  return static_cast<int>(ceiled);
}

bool check_misspecification(const Eigen::VectorXd& theta, const Eigen::VectorXd& c_low,
                            const Eigen::VectorXd& c_high, double epsilon) {
  if (theta.size() != c_low.size() || theta.size() != c_high.size()) {
    fail(ErrorKind::DimensionError, "theta and box dimensions differ");
  }
  return ((c_low - theta).cwiseAbs().array() <= epsilon).any() ||
         ((c_high - theta).cwiseAbs().array() <= epsilon).any();
}

AlignmentState initial_state(const AlignmentConfig& config) {
  config.validate();
  AlignmentState state;
  state.polytope = initial_box(config.c_low, config.c_high);
  const double volume = (config.c_high - config.c_low).prod();
  state.budget = max_corrections(volume, config.rho_H, static_cast<int>(config.c_low.size()));
  state.ellipsoid = mve(state.polytope, config.mve);
  state.theta = state.ellipsoid.center;
  return state;
}

AlignmentState align_step(const AlignmentState& state, const BarrierProblem& problem,
                          const Trajectory& plan, const Eigen::VectorXd& correction,
                          const MveOptions& options) {
  if (state.iteration >= state.budget) {
    fail(ErrorKind::InvalidArgument, "correction budget already spent");
  }
  const Cut cut = build_cut(*problem.dynamics, *problem.cost, *problem.constraint, problem.gamma,
                            plan, correction);
  AlignmentState next = state;
  next.polytope = apply_cut(state.polytope, cut);
  try {
    next.ellipsoid = mve(next.polytope, options);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InfeasiblePolytope) {
      fail(ErrorKind::EmptyHypothesis, std::string("no parameter survives the cut (") + e.what() + ")");
    }
    throw;
  }
  next.theta = next.ellipsoid.center;
  next.iteration = state.iteration + 1;

  TraceRecord record;
  record.iteration = next.iteration;
  record.correction = correction;
  record.log_det_H = next.ellipsoid.log_det();
  record.theta = next.theta;
  record.cut = cut;
  next.trace.push_back(std::move(record));
  return next;
}

// ---------------------------------------------------------------------------

namespace {

bool strictly_feasible(const Environment& env, const BarrierProblem& problem,
                       const Eigen::MatrixXd& controls) {
  if (controls.rows() != env.control_dim() || controls.cols() != env.horizon()) return false;
  try {
    const Trajectory traj = rollout(*problem.dynamics, env.state(), controls);
    return evaluate_g(*problem.constraint, problem.theta, traj) < 0.0;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::optional<SolveResult> plan_from_state(const Environment& env, const BarrierProblem& problem,
                                           const Eigen::MatrixXd& previous_controls,
                                           const SolverOptions& options) {
  std::vector<Eigen::MatrixXd> candidates;
  if (previous_controls.size() > 0) candidates.push_back(shift_controls(previous_controls));
  candidates.push_back(Eigen::MatrixXd::Zero(env.control_dim(), env.horizon()));
  candidates.push_back(env.feasible_fallback(problem.theta));
  for (const auto& warm : candidates) {
    if (!strictly_feasible(env, problem, warm)) continue;
    return solve_barrier_mpc(problem, env.state(), warm, options);
  }
  return std::nullopt;
}

AlignmentResult run_alignment(Environment& env, CorrectionSource& source,
                              const AlignmentConfig& config, const AlignmentObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(config.rng_seed);
  AlignmentResult result{{}, initial_state(config)};
  AlignmentState& state = result.state;
  if (state.theta.size() != env.theta_dim()) {
    fail(ErrorKind::DimensionError, "box dimension does not match the environment's constraint");
  }
  auto finish = [&](OutcomeKind kind, int steps) {
    result.outcome = {kind, state.theta, state.iteration, steps};
    return result;
  };
  auto verdict_at_budget = [&](int steps) {
    const bool misspecified =
        check_misspecification(state.theta, config.c_low, config.c_high, config.epsilon_misspec);
    return finish(misspecified ? OutcomeKind::Misspecified : OutcomeKind::BudgetExhausted, steps);
  };

  if (source.declares_converged(state.theta)) return finish(OutcomeKind::Converged, 0);
  if (state.iteration >= state.budget - 1) return verdict_at_budget(0);

  env.reset(rng);
  Eigen::MatrixXd previous;
  int failed_starts = 0;
  const auto reference = source.reference_theta();

  for (int step = 0; step < config.max_env_steps; ++step) {
    auto emergency_reset = [&] {
      if (++failed_starts > config.max_emergency_resets) {
        fail(ErrorKind::InfeasibleStart, "no strictly feasible warm start after repeated resets");
      }
      if (observer.on_emergency_reset) observer.on_emergency_reset(step);
      env.reset(rng);
      previous.resize(0, 0);
    };

    BarrierProblem problem = env.problem(state.theta);
    std::optional<SolveResult> solution = plan_from_state(env, problem, previous, config.solver);
    if (!solution) {
      emergency_reset();
      continue;
    }
    failed_starts = 0;
    if (observer.on_solve) observer.on_solve({state, problem, *solution, step});

    const HumanInput input = source.poll({env, state, problem, solution->trajectory, step});
    switch (input.kind) {
      case InputKind::None:
        break;
      case InputKind::Satisfied:
        return finish(OutcomeKind::SatisfiedByHuman, step);
      case InputKind::EmergencyStop:
      case InputKind::Reset: {
        env.reset(rng);
        previous.resize(0, 0);
        if (observer.on_env) observer.on_env({EpisodeEventKind::Reset, env.state()});
        continue;
      }
      case InputKind::Correction: {
        AlignmentState next =
            align_step(state, problem, solution->trajectory, input.direction, config.mve);
        TraceRecord& record = next.trace.back();
        record.env_step = step;
        record.wall_time_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (reference) record.distance_to_truth = (next.theta - *reference).norm();
        if (observer.on_cut) {
          observer.on_cut({state, next, record.cut, solution->trajectory, *solution});
        }
        state = std::move(next);
        if (source.declares_converged(state.theta)) return finish(OutcomeKind::Converged, step + 1);
        if (state.iteration >= state.budget - 1) return verdict_at_budget(step + 1);

        // The updated constraint takes effect immediately: replan before acting.
        problem = env.problem(state.theta);
        solution = plan_from_state(env, problem, solution->trajectory.controls, config.solver);
        if (!solution) {
          emergency_reset();
          continue;
        }
        if (observer.on_solve) observer.on_solve({state, problem, *solution, step});
        break;
      }
    }

    const EpisodeEvent event = env_step(env, solution->trajectory.controls.col(0), rng);
    if (observer.on_env) observer.on_env(event);
    if (event.kind == EpisodeEventKind::Stepped) {
      previous = solution->trajectory.controls;
    } else {
      previous.resize(0, 0);
    }
  }
  return finish(source.satisfied_at_limit() ? OutcomeKind::SatisfiedByHuman
                                            : OutcomeKind::BudgetExhausted,
                config.max_env_steps);
}

}  // namespace safe_align
