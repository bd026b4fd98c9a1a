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

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "safe_align/envs.hpp"
#include "safe_align/geometry.hpp"
#include "safe_align/trajopt.hpp"

namespace safe_align {

struct AlignmentConfig {
  Eigen::VectorXd c_low;
  Eigen::VectorXd c_high;
  /// Termination radius: the intent set is assumed to contain a ball of this
  /// radius.
  double rho_H = 0.02;
  /// Componentwise distance to the initial box that flags misspecification.
  double epsilon_misspec = 0.05;
  std::uint64_t rng_seed = 0;
  /// Environment steps after which the run stops without a verdict.
  int max_env_steps = 20000;
  /// Consecutive failed warm starts tolerated before giving up.
  int max_emergency_resets = 100;
  SolverOptions solver;
  MveOptions mve;

  /// Throws InvalidArgument / DimensionError / EmptyBox.
  void validate() const;
};

struct TraceRecord {
  int iteration = 0;
  Eigen::VectorXd correction;
  double log_det_H = 0.0;
  Eigen::VectorXd theta;
  std::optional<double> distance_to_truth;
  /// Cut as built from the plan, before row normalisation.
  Cut cut;
  int env_step = 0;
  /// Elapsed wall time since the run started (excluded from trace files).
  double wall_time_ms = 0.0;
};

struct AlignmentState {
  Polytope polytope;
  Ellipsoid ellipsoid;
  /// Current parameter: the MVE centre of `polytope`.
  Eigen::VectorXd theta;
  /// Corrections applied so far.
  int iteration = 0;
  int budget = 0;
  std::vector<TraceRecord> trace;
};

enum class OutcomeKind { Converged, SatisfiedByHuman, Misspecified, BudgetExhausted };

std::string_view to_string(OutcomeKind kind);

struct AlignmentOutcome {
  OutcomeKind kind = OutcomeKind::BudgetExhausted;
  Eigen::VectorXd final_theta;
  int corrections_used = 0;
  int env_steps = 0;
};

/// Volume of the r-dimensional unit ball, pi^(r/2) / Gamma(r/2 + 1).
double unit_ball_volume(int r);

/// The real number whose ceiling is the correction budget:
///   ln(tau_r rho^r / Vol) / ln(1 - 1/r).
/// Throws InvalidBudget for r < 2, non-positive inputs, or a ball at least as
/// large as the box.
double budget_exponent(double box_volume, double rho, int r);

/// Correction budget K = ceil(budget_exponent(...)).
int max_corrections(double box_volume, double rho, int r);

/// True iff some component of theta lies within epsilon of a box face.
bool check_misspecification(const Eigen::VectorXd& theta, const Eigen::VectorXd& c_low,
                            const Eigen::VectorXd& c_high, double epsilon);

/// Box polytope, its MVE and centre, and the budget for the configuration.
AlignmentState initial_state(const AlignmentConfig& config);

/// One cutting step: build the cut from the plan and correction, intersect,
/// recentre. The problem's theta must be the state's current theta.
/// Throws EmptyHypothesis when no parameter survives the cut.
AlignmentState align_step(const AlignmentState& state, const BarrierProblem& problem,
                          const Trajectory& plan, const Eigen::VectorXd& correction,
                          const MveOptions& options = {});

// ---------------------------------------------------------------------------
// Driving loop

enum class InputKind { None, Correction, EmergencyStop, Reset, Satisfied };

struct HumanInput {
  InputKind kind = InputKind::None;
  Eigen::VectorXd direction;
};

struct CorrectionContext {
  const Environment& env;
  const AlignmentState& state;
  /// Problem under the current theta.
  const BarrierProblem& problem;
  /// Plan the current control was taken from.
  const Trajectory& plan;
  int env_step = 0;
};

/// Where corrections come from: a simulated oracle or a live user.
class CorrectionSource {
 public:
  virtual ~CorrectionSource() = default;

  /// Called once per control step, after planning and before execution.
  virtual HumanInput poll(const CorrectionContext& context) = 0;

  /// Source-side success test (the oracle knows the intent set).
  virtual bool declares_converged(const Eigen::VectorXd& /*theta*/) const { return false; }

  /// Verdict when the step limit is reached without any other outcome.
  virtual bool satisfied_at_limit() const { return false; }

  /// Ground-truth parameter, for distance_to_truth in the trace.
  virtual std::optional<Eigen::VectorXd> reference_theta() const { return std::nullopt; }
};

struct SolveInfo {
  const AlignmentState& state;
  const BarrierProblem& problem;
  const SolveResult& result;
  int env_step = 0;
};

struct CutInfo {
  const AlignmentState& before;
  const AlignmentState& after;
  /// Raw (unnormalised) cut as built from the plan.
  const Cut& cut;
  const Trajectory& plan;
  const SolveResult& solve;
};

/// Optional hooks; tests use them to check per-step properties.
struct AlignmentObserver {
  std::function<void(const SolveInfo&)> on_solve;
  std::function<void(const CutInfo&)> on_cut;
  std::function<void(const EpisodeEvent&)> on_env;
  /// Emergency resets forced by a missing feasible warm start.
  std::function<void(int env_step)> on_emergency_reset;
};

struct AlignmentResult {
  AlignmentOutcome outcome;
  AlignmentState state;
};

/// Plans with the barrier MPC from the current state, choosing the first
/// strictly feasible warm start among the previous plan shifted by one step,
/// zero controls, and the environment's fallback. Returns nullopt when none
/// is feasible.
std::optional<SolveResult> plan_from_state(const Environment& env, const BarrierProblem& problem,
                                           const Eigen::MatrixXd& previous_controls,
                                           const SolverOptions& options);

/// Runs the learning loop until an outcome is reached.
AlignmentResult run_alignment(Environment& env, CorrectionSource& source,
                              const AlignmentConfig& config,
                              const AlignmentObserver& observer = {});

}  // namespace safe_align
