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
#include <memory>
#include <vector>

#include "safe_align/constraints.hpp"
#include "safe_align/dynamics.hpp"

namespace safe_align {

/// J(xi) = sum_t c(x_t, u_t, t) + h(x_T) over a fixed horizon.
class CostSpec {
 public:
  virtual ~CostSpec() = default;

  virtual int horizon() const = 0;
  virtual double stage(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       int t) const = 0;
  virtual double terminal(const Eigen::VectorXd& x) const = 0;
  virtual void stage_gradient(const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u, int t,
                              Eigen::Ref<Eigen::VectorXd> dx,
                              Eigen::Ref<Eigen::VectorXd> du) const = 0;
  virtual Eigen::VectorXd terminal_gradient(const Eigen::VectorXd& x) const = 0;

  double total(const Trajectory& traj) const;
  TrajectoryPartials partials(const Trajectory& traj) const;
};

/// Quadratic tracking cost:
///   c(x,u) = (x - x_ref)^T Q (x - x_ref) + u^T R u
///   h(x)   = (x - x_ref)^T Qf (x - x_ref)
class QuadraticCost final : public CostSpec {
 public:
  QuadraticCost(int horizon, Eigen::VectorXd reference, Eigen::MatrixXd state_weight,
                Eigen::MatrixXd control_weight, Eigen::MatrixXd terminal_weight);

  int horizon() const override { return horizon_; }
  double stage(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
               int t) const override;
  double terminal(const Eigen::VectorXd& x) const override;
  void stage_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& u, int t,
                      Eigen::Ref<Eigen::VectorXd> dx,
                      Eigen::Ref<Eigen::VectorXd> du) const override;
  Eigen::VectorXd terminal_gradient(const Eigen::VectorXd& x) const override;

  const Eigen::VectorXd& reference() const { return reference_; }

 private:
  int horizon_;
  Eigen::VectorXd reference_;
  Eigen::MatrixXd Q_;
  Eigen::MatrixXd R_;
  Eigen::MatrixXd Qf_;
};

/// B(xi, theta) = J(xi) - gamma * ln(-g_theta(xi)).
struct BarrierProblem {
  std::shared_ptr<const DynamicsModel> dynamics;
  std::shared_ptr<const CostSpec> cost;
  std::shared_ptr<const FeatureConstraint> constraint;
  Eigen::VectorXd theta;
  double gamma = 0.1;

  /// Throws InvalidArgument / DimensionError on an ill-formed problem.
  void validate() const;
  /// Same problem evaluated under a different parameter.
  BarrierProblem with_theta(const Eigen::VectorXd& other) const;
};

struct SolverOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double line_search_shrink = 0.5;
  double initial_step = 1.0;
  /// Curvature pairs kept by the quasi-Newton direction; 0 gives plain
  /// steepest descent.
  int memory = 10;
  /// Newton steps (finite-difference Hessian of the analytic gradient) run
  /// after the first-order phase when the gradient is still above tolerance.
  int newton_polish_steps = 6;
  /// Gradient norm at which the first-order phase hands over to the Newton
  /// steps (when newton_polish_steps > 0).
  double polish_threshold = 1e-5;

  void validate() const;
};

struct SolveResult {
  Trajectory trajectory;
  double barrier = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Barrier value of the warm start followed by every accepted iterate.
  std::vector<double> accepted_values;
};

double barrier_value(const BarrierProblem& problem, const Trajectory& traj);

/// Gradient of B w.r.t. the stacked controls, through the dynamics.
Eigen::VectorXd barrier_gradient(const BarrierProblem& problem,
                                 const Trajectory& traj);

/// Minimises B from a strictly feasible warm start. Every accepted iterate
/// stays strictly inside g_theta < 0.
SolveResult solve_barrier_mpc(const BarrierProblem& problem,
                              const Eigen::VectorXd& x0,
                              const Eigen::MatrixXd& warm_start,
                              const SolverOptions& options);

struct PolicyStep {
  Eigen::VectorXd control;
  SolveResult solution;
};

/// Receding-horizon policy: solve, then return the first control.
PolicyStep mpc_policy_step(const BarrierProblem& problem,
                           const Eigen::VectorXd& x_current,
                           const Eigen::MatrixXd& warm_start,
                           const SolverOptions& options);

/// Drops the first control and repeats the last one.
Eigen::MatrixXd shift_controls(const Eigen::MatrixXd& controls);

}  // namespace safe_align
