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
#include <vector>

namespace safe_align {

/// Discrete-time system x_{t+1} = f(x_t, u_t).
class DynamicsModel {
 public:
  struct Jacobians {
    Eigen::MatrixXd A;  // df/dx, n x n
    Eigen::MatrixXd B;  // df/du, n x m
  };

  virtual ~DynamicsModel() = default;

  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;
  virtual Eigen::VectorXd step(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u) const = 0;
  virtual Jacobians step_jacobians(const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& u) const = 0;
};

/// A control sequence together with the states it produces.
///
/// `controls` is m x T (one column per step) and `states` is n x (T+1), so
/// that `states.col(0)` is the initial state.
struct Trajectory {
  Eigen::MatrixXd controls;
  Eigen::MatrixXd states;

  int horizon() const { return static_cast<int>(controls.cols()); }
  int state_dim() const { return static_cast<int>(states.rows()); }
  int control_dim() const { return static_cast<int>(controls.rows()); }

  /// Controls stacked as (u_0, u_1, ..., u_{T-1}) in R^{mT}.
  Eigen::VectorXd stacked_controls() const;
};

/// Local partial derivatives of a scalar trajectory function with respect to
/// each state (n x (T+1)) and each control (m x T), holding everything else
/// fixed. The adjoint pass turns these into a total derivative w.r.t. u.
struct TrajectoryPartials {
  Eigen::MatrixXd dx;
  Eigen::MatrixXd du;

  static TrajectoryPartials zeros(int n, int m, int horizon);
  TrajectoryPartials& operator+=(const TrajectoryPartials& other);
  TrajectoryPartials& operator*=(double scale);
};

/// Per-step Jacobians along a trajectory, computed once and reused by every
/// adjoint pass over that trajectory.
class Linearization {
 public:
  Linearization(const DynamicsModel& dynamics, const Trajectory& traj);

  /// Total derivative d(.)/du_{0:T-1}, stacked in R^{mT}, of a scalar function
  /// whose local partials are given. x_0 is held fixed.
  Eigen::VectorXd control_gradient(const TrajectoryPartials& partials) const;

  int horizon() const { return static_cast<int>(steps_.size()); }

 private:
  std::vector<DynamicsModel::Jacobians> steps_;
  int n_ = 0;
  int m_ = 0;
};

/// Forward simulation. Throws NumericalDivergence if a state becomes
/// non-finite and InvalidArgument on empty or mis-sized controls.
Trajectory rollout(const DynamicsModel& dynamics, const Eigen::VectorXd& x0,
                   const Eigen::MatrixXd& controls);

/// Same as `rollout`, with controls given as a stacked R^{mT} vector.
Trajectory rollout_stacked(const DynamicsModel& dynamics,
                           const Eigen::VectorXd& x0,
                           const Eigen::VectorXd& stacked, int control_dim);

/// A trajectory that sits at `x` for the whole horizon with zero controls.
/// Used for pointwise visualisation of trajectory-level constraints; it is not
/// a rollout of any dynamics.
Trajectory stationary_trajectory(const Eigen::VectorXd& x, int control_dim,
                                 int horizon);

}  // namespace safe_align
