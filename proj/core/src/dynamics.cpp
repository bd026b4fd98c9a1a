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

#include "safe_align/dynamics.hpp"

#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

Eigen::VectorXd Trajectory::stacked_controls() const {
  return Eigen::Map<const Eigen::VectorXd>(controls.data(), controls.size());
}

TrajectoryPartials TrajectoryPartials::zeros(int n, int m, int horizon) {
  return {Eigen::MatrixXd::Zero(n, horizon + 1), Eigen::MatrixXd::Zero(m, horizon)};
}

TrajectoryPartials& TrajectoryPartials::operator+=(const TrajectoryPartials& other) {
  dx += other.dx;
  du += other.du;
  return *this;
}

TrajectoryPartials& TrajectoryPartials::operator*=(double scale) {
  dx *= scale;
  du *= scale;
  return *this;
}

Linearization::Linearization(const DynamicsModel& dynamics, const Trajectory& traj)
    : n_(dynamics.state_dim()), m_(dynamics.control_dim()) {
  const int T = traj.horizon();
  steps_.reserve(T);
  for (int t = 0; t < T; ++t) {
    steps_.push_back(dynamics.step_jacobians(traj.states.col(t), traj.controls.col(t)));
  }
}

Eigen::VectorXd Linearization::control_gradient(const TrajectoryPartials& partials) const {
  const int T = horizon();
  Eigen::VectorXd grad(m_ * T);
  // lambda_t = dJ/dx_t including everything downstream of x_t.
  Eigen::VectorXd lambda = partials.dx.col(T);
  for (int t = T - 1; t >= 0; --t) {
    const auto& jac = steps_[t];
    grad.segment(t * m_, m_) = partials.du.col(t) + jac.B.transpose() * lambda;
    lambda = partials.dx.col(t) + jac.A.transpose() * lambda;
  }
  return grad;
}

Trajectory rollout(const DynamicsModel& dynamics, const Eigen::VectorXd& x0,
                   const Eigen::MatrixXd& controls) {
  const int n = dynamics.state_dim();
  const int m = dynamics.control_dim();
  if (controls.cols() == 0) fail(ErrorKind::InvalidArgument, "rollout needs at least one control");
  if (controls.rows() != m || x0.size() != n) {
    fail(ErrorKind::DimensionError, "rollout: control or state dimension mismatch");
  }
  if (!x0.allFinite()) fail(ErrorKind::NumericalDivergence, "rollout: non-finite initial state");

  Trajectory traj;
  traj.controls = controls;
  traj.states.resize(n, controls.cols() + 1);
  traj.states.col(0) = x0;
  for (Eigen::Index t = 0; t < controls.cols(); ++t) {
    traj.states.col(t + 1) = dynamics.step(traj.states.col(t), controls.col(t));
    if (!traj.states.col(t + 1).allFinite()) {
      fail(ErrorKind::NumericalDivergence,
           "rollout: non-finite state at step " + std::to_string(t + 1));
    }
  }
  return traj;
}

Trajectory rollout_stacked(const DynamicsModel& dynamics, const Eigen::VectorXd& x0,
                           const Eigen::VectorXd& stacked, int control_dim) {
  if (control_dim <= 0 || stacked.size() % control_dim != 0) {
    fail(ErrorKind::DimensionError, "stacked controls not a multiple of control_dim");
  }
  const Eigen::Index T = stacked.size() / control_dim;
  return rollout(dynamics, x0, Eigen::Map<const Eigen::MatrixXd>(stacked.data(), control_dim, T));
}

Trajectory stationary_trajectory(const Eigen::VectorXd& x, int control_dim, int horizon) {
  Trajectory traj;
  traj.controls = Eigen::MatrixXd::Zero(control_dim, horizon);
  traj.states = x.replicate(1, horizon + 1);
  return traj;
}

}  // namespace safe_align
