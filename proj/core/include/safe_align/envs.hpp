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
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "safe_align/constraints.hpp"
#include "safe_align/dynamics.hpp"
#include "safe_align/trajopt.hpp"

namespace safe_align {

enum class EpisodeEventKind { Stepped, ReachedTarget, ViolatedTruth, Reset };

std::string_view to_string(EpisodeEventKind kind);

struct EpisodeEvent {
  EpisodeEventKind kind = EpisodeEventKind::Stepped;
  /// State reached by the step, before any automatic reset.
  Eigen::VectorXd state;
};

/// A simulated system the alignment loop can drive: the MPC ingredients, the
/// executed state, reset rules and (optionally) a ground-truth constraint.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;

  /// Barrier MPC problem under the learnable constraint with weights theta.
  virtual BarrierProblem problem(const Eigen::VectorXd& theta) const = 0;
  virtual int horizon() const = 0;
  virtual int control_dim() const = 0;
  virtual int theta_dim() const = 0;

  const Eigen::VectorXd& state() const { return state_; }
  void set_state(const Eigen::VectorXd& x);

  /// Draws a fresh start state.
  virtual void reset(std::mt19937_64& rng) = 0;

  /// Executes one control. ViolatedTruth and ReachedTarget trigger a reset
  /// before returning.
  virtual EpisodeEvent step(const Eigen::VectorXd& u, std::mt19937_64& rng) = 0;

  virtual bool has_truth() const = 0;
  /// Throws NotSupervised when no ground truth is configured.
  virtual bool truth_violated(const Eigen::VectorXd& state) const = 0;

  /// Barrier problem under the ground-truth constraint (oracle use).
  virtual BarrierProblem truth_problem() const = 0;

  /// A control sequence strictly feasible under theta from the current state,
  /// or an empty matrix when the environment has none to offer.
  virtual Eigen::MatrixXd feasible_fallback(const Eigen::VectorXd& theta) const;

 protected:
  Eigen::VectorXd state_;
};

/// Checks u and forwards to env.step. Throws InvalidArgument on a non-finite
/// or mis-sized control.
EpisodeEvent env_step(Environment& env, const Eigen::VectorXd& u, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Pendulum

/// Euler-discretised pendulum, x = [alpha, alpha_dot]:
///   alpha_ddot = 3 / (m l^2) * (-m g l sin(alpha) / 2 + u - d alpha_dot)
class PendulumDynamics final : public DynamicsModel {
 public:
  struct Params {
    double mass = 1.0;
    double length = 1.0;
    double damping = 0.4;
    double gravity = 10.0;
    double dt = 0.02;
  };

  PendulumDynamics() : PendulumDynamics(Params{}) {}
  explicit PendulumDynamics(Params params);

  int state_dim() const override { return 2; }
  int control_dim() const override { return 1; }
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;
  Jacobians step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;

  const Params& params() const { return params_; }

 private:
  Params params_;
};

class PendulumEnv final : public Environment {
 public:
  struct Params {
    PendulumDynamics::Params physics;
    int horizon = 40;
    Eigen::Vector2d target{M_PI, 0.0};
    double control_weight = 0.1;
    Eigen::Vector2d terminal_weight{25.0, 10.0};
    double bound = 3.0;
    double gamma = 0.1;
    /// Diagonal of the process-noise covariance.
    Eigen::Vector2d noise_variance{1e-5, 4e-5};
    bool noise = true;
    Eigen::Vector2d reset_low{0.0, 0.0};
    Eigen::Vector2d reset_high{2.0 * M_PI / 3.0, 3.0};
    /// Reset states satisfy theta_H^T x <= bound - reset_margin.
    double reset_margin = 0.25;
    double target_radius = 0.1;
    std::optional<Eigen::Vector2d> truth_theta = Eigen::Vector2d(0.6, 1.0);
  };

  PendulumEnv() : PendulumEnv(Params{}) {}
  explicit PendulumEnv(Params params);

  std::string name() const override { return "pendulum"; }
  BarrierProblem problem(const Eigen::VectorXd& theta) const override;
  int horizon() const override { return params_.horizon; }
  int control_dim() const override { return 1; }
  int theta_dim() const override { return 2; }
  void reset(std::mt19937_64& rng) override;
  EpisodeEvent step(const Eigen::VectorXd& u, std::mt19937_64& rng) override;
  bool has_truth() const override { return params_.truth_theta.has_value(); }
  bool truth_violated(const Eigen::VectorXd& state) const override;
  BarrierProblem truth_problem() const override;
  Eigen::MatrixXd feasible_fallback(const Eigen::VectorXd& theta) const override;

  const Params& params() const { return params_; }
  const std::shared_ptr<const PendulumDynamics>& dynamics() const { return dynamics_; }
  const std::shared_ptr<const AffineStateConstraint>& constraint() const { return constraint_; }

 private:
  Params params_;
  std::shared_ptr<const PendulumDynamics> dynamics_;
  std::shared_ptr<const QuadraticCost> cost_;
  std::shared_ptr<const AffineStateConstraint> constraint_;
};

// ---------------------------------------------------------------------------
// Planar gate

/// Point mass in the plane, x = [px, py, vx, vy], u = acceleration:
///   p' = p + dt v,  v' = v + dt u
class DoubleIntegrator2D final : public DynamicsModel {
 public:
  explicit DoubleIntegrator2D(double dt = 0.1);

  int state_dim() const override { return 4; }
  int control_dim() const override { return 2; }
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;
  Jacobians step_jacobians(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;

  double dt() const { return dt_; }

 private:
  double dt_;
  Jacobians jac_;
};

/// Vertical wall at x = gate_x with one opening centred at gate_y.
struct GateGeometry {
  double gate_x = 5.0;
  double gate_y = 5.0;
  double opening_half_width = 1.5;
  double wall_half_thickness = 0.3;

  /// Distance outside the opening along y (negative inside the opening).
  double clearance(double y) const;
  bool in_wall(const Eigen::Vector2d& p) const;
};

/// Ground-truth weights for the planar environment: each RBF centre gets
/// scale * (signed clearance of its y coordinate from the opening), so
/// centres on the wall push g up and centres in the opening pull it down.
Eigen::VectorXd clearance_weights(const Eigen::Matrix2Xd& centers, const GateGeometry& gate,
                                  double scale);

/// Grid test of a learned planar constraint, evaluated on stationary
/// trajectories: every wall cell must have g > 0 and every cell of the
/// corridor through the opening g < 0. Cells within the margins of the
/// opening edges are not classified.
struct GateCheck {
  double wall_margin = 0.5;
  double corridor_margin = 0.5;
  double spacing = 0.25;
};

struct GateCheckResult {
  int wall_cells = 0;
  int corridor_cells = 0;
  int wall_failures = 0;
  int corridor_failures = 0;

  bool holds() const { return wall_failures == 0 && corridor_failures == 0; }
};

class PlanarGateEnv final : public Environment {
 public:
  struct Params {
    double dt = 0.1;
    int horizon = 20;
    double workspace = 10.0;
    GateGeometry gate;
    double start_x = 0.5;
    double start_y_low = 4.0;
    double start_y_high = 6.0;
    std::vector<Eigen::Vector2d> targets = {{9.5, 1.0}, {9.5, 5.0}, {9.5, 9.0}};
    double target_radius = 0.3;
    double position_weight = 1.0;
    double velocity_weight = 0.1;
    double control_weight = 0.5;
    double terminal_weight = 20.0;
    double gamma = 50.0;
    int rbf_count = 20;
    double rbf_width = 0.45;
    int rbf_start = 5;
    double rbf_decay = 0.9;
    double phi0 = -1.0;
    bool supervised = true;
    /// Scale of the clearance_weights ground truth.
    double truth_scale = 0.1;
  };

  PlanarGateEnv() : PlanarGateEnv(Params{}) {}
  explicit PlanarGateEnv(Params params);

  std::string name() const override { return "planar_gate"; }
  BarrierProblem problem(const Eigen::VectorXd& theta) const override;
  int horizon() const override { return params_.horizon; }
  int control_dim() const override { return 2; }
  int theta_dim() const override { return params_.rbf_count; }
  void reset(std::mt19937_64& rng) override;
  EpisodeEvent step(const Eigen::VectorXd& u, std::mt19937_64& rng) override;
  bool has_truth() const override { return params_.supervised; }
  bool truth_violated(const Eigen::VectorXd& state) const override;
  BarrierProblem truth_problem() const override;
  Eigen::MatrixXd feasible_fallback(const Eigen::VectorXd& theta) const override;

  /// Moves to the next target and resets the robot (the "enter" key).
  void switch_target(std::mt19937_64& rng);
  const Eigen::Vector2d& target() const { return params_.targets[target_index_]; }

  const Params& params() const { return params_; }
  const std::shared_ptr<const RbfAccumulatedConstraint>& constraint() const { return constraint_; }
  const Eigen::VectorXd& truth_theta() const { return truth_theta_; }

  GateCheckResult check_gate(const Eigen::VectorXd& theta, const GateCheck& check = {}) const;

 private:
  void rebuild_cost();

  Params params_;
  std::size_t target_index_ = 0;
  std::shared_ptr<const DoubleIntegrator2D> dynamics_;
  std::shared_ptr<const QuadraticCost> cost_;
  std::shared_ptr<const RbfAccumulatedConstraint> constraint_;
  Eigen::VectorXd truth_theta_;
};

}  // namespace safe_align
