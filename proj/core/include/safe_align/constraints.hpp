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

#include "safe_align/dynamics.hpp"

namespace safe_align {

/// Safety value g_theta(xi) = phi0(xi) + theta^T phi(xi), linear in theta.
/// Trajectories with g <= 0 are safe.
class FeatureConstraint {
 public:
  virtual ~FeatureConstraint() = default;

  /// Number of learnable weights r.
  virtual int dim() const = 0;

  virtual double phi0(const Trajectory& traj) const = 0;
  virtual Eigen::VectorXd features(const Trajectory& traj) const = 0;

  virtual TrajectoryPartials phi0_partials(const Trajectory& traj) const = 0;
  /// One entry per feature.
  virtual std::vector<TrajectoryPartials> feature_partials(
      const Trajectory& traj) const = 0;

  /// Partials of g_theta; the default sums the per-feature partials.
  virtual TrajectoryPartials g_partials(const Trajectory& traj,
                                        const Eigen::VectorXd& theta) const;
};

/// phi0, phi and their total derivatives w.r.t. the stacked controls.
struct FeatureEvaluation {
  double phi0 = 0.0;
  Eigen::VectorXd grad_phi0;  // R^{mT}
  Eigen::VectorXd phi;        // R^r
  Eigen::MatrixXd dphi_du;    // r x mT
};

/// Throws DimensionError when theta does not match the constraint.
double evaluate_g(const FeatureConstraint& constraint,
                  const Eigen::VectorXd& theta, const Trajectory& traj);

FeatureEvaluation feature_values_and_gradients(
    const FeatureConstraint& constraint, const DynamicsModel& dynamics,
    const Trajectory& traj);

/// g = -bound + theta^T x_k for one predicted state x_k.
class AffineStateConstraint final : public FeatureConstraint {
 public:
  AffineStateConstraint(int state_dim, double bound, int state_index = 1);

  int dim() const override { return state_dim_; }
  double phi0(const Trajectory& traj) const override;
  Eigen::VectorXd features(const Trajectory& traj) const override;
  TrajectoryPartials phi0_partials(const Trajectory& traj) const override;
  std::vector<TrajectoryPartials> feature_partials(
      const Trajectory& traj) const override;
  TrajectoryPartials g_partials(const Trajectory& traj,
                                const Eigen::VectorXd& theta) const override;

  double bound() const { return bound_; }
  int state_index() const { return state_index_; }

 private:
  int state_dim_;
  double bound_;
  int state_index_;
};

/// Gaussian radial basis features of a planar position, accumulated over the
/// horizon with per-step weights:
///
///   phi_i(xi) = sum_t beta_t * exp(-eps^2 * |p_t - c_i|^2)
///
/// phi0 is a constant (normally -1) so that theta carries no scale ambiguity.
class RbfAccumulatedConstraint final : public FeatureConstraint {
 public:
  struct Params {
    Eigen::Matrix2Xd centers;
    double width = 0.45;
    /// beta_t for t = 0..T; its length fixes the horizon it accepts.
    Eigen::VectorXd step_weights;
    double phi0_value = -1.0;
    /// Rows of the state vector holding the planar position.
    int position_x_index = 0;
    int position_y_index = 1;
  };

  explicit RbfAccumulatedConstraint(Params params);

  int dim() const override { return static_cast<int>(params_.centers.cols()); }
  double phi0(const Trajectory& traj) const override;
  Eigen::VectorXd features(const Trajectory& traj) const override;
  TrajectoryPartials phi0_partials(const Trajectory& traj) const override;
  std::vector<TrajectoryPartials> feature_partials(
      const Trajectory& traj) const override;
  TrajectoryPartials g_partials(const Trajectory& traj,
                                const Eigen::VectorXd& theta) const override;

  const Params& params() const { return params_; }

  /// beta_t = 0 for t < start, decay^(t-start) afterwards, for t = 0..horizon.
  static Eigen::VectorXd discounted_schedule(int horizon, int start = 5,
                                             double decay = 0.9);
  /// `count` centers at x = line_x with y evenly spaced on [y_min, y_max].
  static Eigen::Matrix2Xd centers_on_vertical_line(int count, double line_x,
                                                   double y_min, double y_max);

 private:
  void check_horizon(const Trajectory& traj) const;
  double rbf(const Eigen::Vector2d& p, int i) const;

  Params params_;
};

}  // namespace safe_align
