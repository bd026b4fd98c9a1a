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

#include "safe_align/constraints.hpp"

#include <cmath>
#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

TrajectoryPartials FeatureConstraint::g_partials(const Trajectory& traj,
                                                 const Eigen::VectorXd& theta) const {
  TrajectoryPartials total = phi0_partials(traj);
  const auto per_feature = feature_partials(traj);
  for (int i = 0; i < dim(); ++i) {
    total.dx += theta[i] * per_feature[i].dx;
    total.du += theta[i] * per_feature[i].du;
  }
  return total;
}

double evaluate_g(const FeatureConstraint& constraint, const Eigen::VectorXd& theta,
                  const Trajectory& traj) {
  if (theta.size() != constraint.dim()) {
    fail(ErrorKind::DimensionError, "theta has " + std::to_string(theta.size()) +
                                        " entries, constraint expects " +
                                        std::to_string(constraint.dim()));
  }
  const double phi0 = constraint.phi0(traj);
  if (constraint.dim() == 0) return phi0;
  return phi0 + theta.dot(constraint.features(traj));
}

FeatureEvaluation feature_values_and_gradients(const FeatureConstraint& constraint,
                                               const DynamicsModel& dynamics,
                                               const Trajectory& traj) {
  const Linearization lin(dynamics, traj);
  FeatureEvaluation out;
  out.phi0 = constraint.phi0(traj);
  out.grad_phi0 = lin.control_gradient(constraint.phi0_partials(traj));
  out.phi = constraint.features(traj);
  const auto partials = constraint.feature_partials(traj);
  out.dphi_du.resize(constraint.dim(), traj.controls.size());
  for (int i = 0; i < constraint.dim(); ++i) {
    out.dphi_du.row(i) = lin.control_gradient(partials[i]).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------

AffineStateConstraint::AffineStateConstraint(int state_dim, double bound, int state_index)
    : state_dim_(state_dim), bound_(bound), state_index_(state_index) {
  if (state_dim <= 0 || state_index < 0) {
    fail(ErrorKind::InvalidArgument, "affine constraint needs a positive state_dim and index >= 0");
  }
}

double AffineStateConstraint::phi0(const Trajectory&) const { return -bound_; }

Eigen::VectorXd AffineStateConstraint::features(const Trajectory& traj) const {
  if (traj.states.cols() <= state_index_) {
    fail(ErrorKind::DimensionError, "trajectory shorter than constrained state index");
  }
  return traj.states.col(state_index_);
}

TrajectoryPartials AffineStateConstraint::phi0_partials(const Trajectory& traj) const {
  return TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
}

std::vector<TrajectoryPartials> AffineStateConstraint::feature_partials(
    const Trajectory& traj) const {
  std::vector<TrajectoryPartials> out;
  out.reserve(state_dim_);
  for (int i = 0; i < state_dim_; ++i) {
    auto p = TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
    p.dx(i, state_index_) = 1.0;
    out.push_back(std::move(p));
  }
  return out;
}

TrajectoryPartials AffineStateConstraint::g_partials(const Trajectory& traj,
                                                     const Eigen::VectorXd& theta) const {
  auto p = TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
  p.dx.col(state_index_) = theta;
  return p;
}

// ---------------------------------------------------------------------------

RbfAccumulatedConstraint::RbfAccumulatedConstraint(Params params) : params_(std::move(params)) {
  if (params_.centers.cols() == 0) fail(ErrorKind::InvalidArgument, "RBF constraint needs centers");
  if (params_.width <= 0.0) fail(ErrorKind::InvalidArgument, "RBF width must be positive");
  if (params_.step_weights.size() < 2) {
    fail(ErrorKind::InvalidArgument, "RBF step weights must cover t = 0..T with T >= 1");
  }
}

void RbfAccumulatedConstraint::check_horizon(const Trajectory& traj) const {
  if (traj.states.cols() != params_.step_weights.size()) {
    fail(ErrorKind::DimensionError, "trajectory horizon does not match RBF step weights");
  }
}

double RbfAccumulatedConstraint::rbf(const Eigen::Vector2d& p, int i) const {
  const double eps2 = params_.width * params_.width;
  return std::exp(-eps2 * (p - params_.centers.col(i)).squaredNorm());
}

double RbfAccumulatedConstraint::phi0(const Trajectory&) const { return params_.phi0_value; }

Eigen::VectorXd RbfAccumulatedConstraint::features(const Trajectory& traj) const {
  check_horizon(traj);
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(dim());
  for (Eigen::Index t = 0; t < traj.states.cols(); ++t) {
    const double beta = params_.step_weights[t];
    if (beta == 0.0) continue;
    const Eigen::Vector2d p(traj.states(params_.position_x_index, t),
                            traj.states(params_.position_y_index, t));
    for (int i = 0; i < dim(); ++i) phi[i] += beta * rbf(p, i);
  }
  return phi;
}

TrajectoryPartials RbfAccumulatedConstraint::phi0_partials(const Trajectory& traj) const {
  return TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
}

std::vector<TrajectoryPartials> RbfAccumulatedConstraint::feature_partials(
    const Trajectory& traj) const {
  check_horizon(traj);
  const double eps2 = params_.width * params_.width;
  std::vector<TrajectoryPartials> out(
      dim(), TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon()));
  for (Eigen::Index t = 0; t < traj.states.cols(); ++t) {
    const double beta = params_.step_weights[t];
    if (beta == 0.0) continue;
    const Eigen::Vector2d p(traj.states(params_.position_x_index, t),
                            traj.states(params_.position_y_index, t));
    for (int i = 0; i < dim(); ++i) {
      const Eigen::Vector2d diff = p - params_.centers.col(i);
      const Eigen::Vector2d d = -2.0 * eps2 * beta * rbf(p, i) * diff;
      out[i].dx(params_.position_x_index, t) = d.x();
      out[i].dx(params_.position_y_index, t) = d.y();
    }
  }
  return out;
}

TrajectoryPartials RbfAccumulatedConstraint::g_partials(const Trajectory& traj,
                                                        const Eigen::VectorXd& theta) const {
  check_horizon(traj);
  const double eps2 = params_.width * params_.width;
  auto total = TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
  for (Eigen::Index t = 0; t < traj.states.cols(); ++t) {
    const double beta = params_.step_weights[t];
    if (beta == 0.0) continue;
    const Eigen::Vector2d p(traj.states(params_.position_x_index, t),
                            traj.states(params_.position_y_index, t));
    Eigen::Vector2d d = Eigen::Vector2d::Zero();
    for (int i = 0; i < dim(); ++i) {
      d += theta[i] * rbf(p, i) * (p - params_.centers.col(i));
    }
    d *= -2.0 * eps2 * beta;
    total.dx(params_.position_x_index, t) = d.x();
    total.dx(params_.position_y_index, t) = d.y();
  }
  return total;
}

Eigen::VectorXd RbfAccumulatedConstraint::discounted_schedule(int horizon, int start,
                                                              double decay) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(horizon + 1);
  for (int t = start; t <= horizon; ++t) beta[t] = std::pow(decay, t - start);
  return beta;
}

Eigen::Matrix2Xd RbfAccumulatedConstraint::centers_on_vertical_line(int count, double line_x,
                                                                    double y_min, double y_max) {
  if (count < 1) fail(ErrorKind::InvalidArgument, "need at least one RBF center");
  Eigen::Matrix2Xd centers(2, count);
  for (int i = 0; i < count; ++i) {
    const double s = count == 1 ? 0.5 : static_cast<double>(i) / (count - 1);
    centers.col(i) << line_x, y_min + s * (y_max - y_min);
  }
  return centers;
}

}  // namespace safe_align
