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

#include "safe_align/envs.hpp"

#include <cmath>
#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

std::string_view to_string(EpisodeEventKind kind) {
  switch (kind) {
    case EpisodeEventKind::Stepped: return "stepped";
    case EpisodeEventKind::ReachedTarget: return "reached_target";
    case EpisodeEventKind::ViolatedTruth: return "violated_truth";
    case EpisodeEventKind::Reset: return "reset";
  }
  return "unknown";
}

void Environment::set_state(const Eigen::VectorXd& x) {
  if (state_.size() != 0 && x.size() != state_.size()) {
    fail(ErrorKind::DimensionError, "state dimension mismatch");
  }
  state_ = x;
}

Eigen::MatrixXd Environment::feasible_fallback(const Eigen::VectorXd&) const { return {}; }

EpisodeEvent env_step(Environment& env, const Eigen::VectorXd& u, std::mt19937_64& rng) {
  if (u.size() != env.control_dim()) fail(ErrorKind::InvalidArgument, "control dimension mismatch");
  if (!u.allFinite()) fail(ErrorKind::InvalidArgument, "control is not finite");
  return env.step(u, rng);
}

// ---------------------------------------------------------------------------

PendulumDynamics::PendulumDynamics(Params params) : params_(params) {
  if (params_.mass <= 0 || params_.length <= 0 || params_.dt <= 0) {
    fail(ErrorKind::InvalidArgument, "pendulum mass, length and dt must be positive");
  }
}

Eigen::VectorXd PendulumDynamics::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  const auto& p = params_;
  const double inertia_inv = 3.0 / (p.mass * p.length * p.length);
  const double acc = inertia_inv * (-0.5 * p.mass * p.gravity * p.length * std::sin(x[0]) + u[0] -
                                    p.damping * x[1]);
  Eigen::VectorXd next(2);
  next << x[0] + p.dt * x[1], x[1] + p.dt * acc;
  return next;
}

DynamicsModel::Jacobians PendulumDynamics::step_jacobians(const Eigen::VectorXd& x,
                                                          const Eigen::VectorXd&) const {
  const auto& p = params_;
  const double inertia_inv = 3.0 / (p.mass * p.length * p.length);
  Jacobians j{Eigen::MatrixXd(2, 2), Eigen::MatrixXd(2, 1)};
  j.A << 1.0, p.dt,
      -p.dt * inertia_inv * 0.5 * p.mass * p.gravity * p.length * std::cos(x[0]),
      1.0 - p.dt * inertia_inv * p.damping;
  j.B << 0.0, p.dt * inertia_inv;
  return j;
}

PendulumEnv::PendulumEnv(Params params)
    : params_(std::move(params)),
      dynamics_(std::make_shared<PendulumDynamics>(params_.physics)) {
  if (params_.gamma <= 0) fail(ErrorKind::InvalidArgument, "gamma must be positive");
  if (!(params_.reset_low.array() <= params_.reset_high.array()).all()) {
    fail(ErrorKind::InvalidArgument, "pendulum reset range is empty");
  }
  cost_ = std::make_shared<QuadraticCost>(
      params_.horizon, params_.target, Eigen::Matrix2d::Zero(),
      Eigen::MatrixXd::Constant(1, 1, params_.control_weight),
      Eigen::Matrix2d(params_.terminal_weight.asDiagonal()));
  constraint_ = std::make_shared<AffineStateConstraint>(2, params_.bound, 1);
  state_ = Eigen::Vector2d::Zero();
}

BarrierProblem PendulumEnv::problem(const Eigen::VectorXd& theta) const {
  return {dynamics_, cost_, constraint_, theta, params_.gamma};
}

BarrierProblem PendulumEnv::truth_problem() const {
  if (!has_truth()) fail(ErrorKind::NotSupervised, "pendulum has no ground truth configured");
  return problem(*params_.truth_theta);
}

void PendulumEnv::reset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Eigen::Vector2d x;
    for (int i = 0; i < 2; ++i) {
      x[i] = params_.reset_low[i] + unit(rng) * (params_.reset_high[i] - params_.reset_low[i]);
    }
    if (!has_truth() || params_.truth_theta->dot(x) <= params_.bound - params_.reset_margin) {
      state_ = x;
      return;
    }
  }
  fail(ErrorKind::InvalidArgument, "pendulum reset range has no state inside the truth margin");
}

EpisodeEvent PendulumEnv::step(const Eigen::VectorXd& u, std::mt19937_64& rng) {
  Eigen::VectorXd next = dynamics_->step(state_, u);
  if (params_.noise) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 2; ++i) next[i] += std::sqrt(params_.noise_variance[i]) * normal(rng);
  }
  EpisodeEvent event{EpisodeEventKind::Stepped, next};
  if (!next.allFinite()) fail(ErrorKind::NumericalDivergence, "pendulum state is not finite");
  if (has_truth() && truth_violated(next)) {
    event.kind = EpisodeEventKind::ViolatedTruth;
    reset(rng);
  } else if ((next - params_.target).norm() <= params_.target_radius) {
    event.kind = EpisodeEventKind::ReachedTarget;
    reset(rng);
  } else {
    state_ = next;
  }
  return event;
}

bool PendulumEnv::truth_violated(const Eigen::VectorXd& state) const {
  if (!has_truth()) fail(ErrorKind::NotSupervised, "pendulum has no ground truth configured");
  if (state.size() != 2) fail(ErrorKind::DimensionError, "pendulum state is 2D");
  return params_.truth_theta->dot(state) > params_.bound;
}

Eigen::MatrixXd PendulumEnv::feasible_fallback(const Eigen::VectorXd& theta) const {
  // g depends on u_0 only, through x_1 = f(x_0, u_0); pick u_0 so that g = -0.5.
  const Eigen::VectorXd x_free = dynamics_->step(state_, Eigen::VectorXd::Zero(1));
  const double slope = theta.dot(dynamics_->step_jacobians(state_, Eigen::VectorXd::Zero(1)).B.col(0));
  if (std::abs(slope) < 1e-9) return {};
  const double target_g = -0.5;
  Eigen::MatrixXd controls = Eigen::MatrixXd::Zero(1, params_.horizon);
  controls(0, 0) = (target_g + params_.bound - theta.dot(x_free)) / slope;
  return controls;
}

// ---------------------------------------------------------------------------

DoubleIntegrator2D::DoubleIntegrator2D(double dt) : dt_(dt) {
  if (dt <= 0) fail(ErrorKind::InvalidArgument, "dt must be positive");
  jac_.A = Eigen::MatrixXd::Identity(4, 4);
  jac_.A.topRightCorner(2, 2) = dt * Eigen::Matrix2d::Identity();
  jac_.B = Eigen::MatrixXd::Zero(4, 2);
  jac_.B.bottomRows(2) = dt * Eigen::Matrix2d::Identity();
}

Eigen::VectorXd DoubleIntegrator2D::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  Eigen::VectorXd next(4);
  next.head(2) = x.head(2) + dt_ * x.tail(2);
  next.tail(2) = x.tail(2) + dt_ * u;
  return next;
}

DynamicsModel::Jacobians DoubleIntegrator2D::step_jacobians(const Eigen::VectorXd&,
                                                            const Eigen::VectorXd&) const {
  return jac_;
}

double GateGeometry::clearance(double y) const {
  return std::abs(y - gate_y) - opening_half_width;
}

bool GateGeometry::in_wall(const Eigen::Vector2d& p) const {
  return std::abs(p.x() - gate_x) <= wall_half_thickness &&
         std::abs(p.y() - gate_y) >= opening_half_width;
}

Eigen::VectorXd clearance_weights(const Eigen::Matrix2Xd& centers, const GateGeometry& gate,
                                  double scale) {
  Eigen::VectorXd theta(centers.cols());
  for (Eigen::Index i = 0; i < centers.cols(); ++i) {
    theta[i] = scale * (std::abs(centers(1, i) - gate.gate_y) - gate.opening_half_width);
  }
  return theta;
}

PlanarGateEnv::PlanarGateEnv(Params params)
    : params_(std::move(params)), dynamics_(std::make_shared<DoubleIntegrator2D>(params_.dt)) {
  if (params_.gamma <= 0) fail(ErrorKind::InvalidArgument, "gamma must be positive");
  if (params_.targets.empty()) fail(ErrorKind::InvalidArgument, "planar environment needs a target");
  const Eigen::VectorXd beta = RbfAccumulatedConstraint::discounted_schedule(
      params_.horizon, params_.rbf_start, params_.rbf_decay);
  RbfAccumulatedConstraint::Params rbf;
  rbf.centers = RbfAccumulatedConstraint::centers_on_vertical_line(
      params_.rbf_count, params_.gate.gate_x, 0.0, params_.workspace);
  rbf.width = params_.rbf_width;
  rbf.step_weights = beta;
  rbf.phi0_value = params_.phi0;
  rbf.position_x_index = 0;
  rbf.position_y_index = 1;
  truth_theta_ = clearance_weights(rbf.centers, params_.gate, params_.truth_scale);
  constraint_ = std::make_shared<RbfAccumulatedConstraint>(std::move(rbf));

  rebuild_cost();
  state_ = Eigen::Vector4d(params_.start_x, 0.5 * (params_.start_y_low + params_.start_y_high), 0, 0);
}

void PlanarGateEnv::rebuild_cost() {
  Eigen::Vector4d reference;
  reference << target(), 0.0, 0.0;
  Eigen::Vector4d q(params_.position_weight, params_.position_weight, params_.velocity_weight,
                    params_.velocity_weight);
  cost_ = std::make_shared<QuadraticCost>(
      params_.horizon, reference, Eigen::Matrix4d(q.asDiagonal()),
      Eigen::Matrix2d(params_.control_weight * Eigen::Matrix2d::Identity()),
      Eigen::Matrix4d((params_.terminal_weight * q).asDiagonal()));
}

BarrierProblem PlanarGateEnv::problem(const Eigen::VectorXd& theta) const {
  return {dynamics_, cost_, constraint_, theta, params_.gamma};
}

BarrierProblem PlanarGateEnv::truth_problem() const {
  if (!has_truth()) fail(ErrorKind::NotSupervised, "planar environment is not supervised");
  return problem(truth_theta_);
}

void PlanarGateEnv::reset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> y(params_.start_y_low, params_.start_y_high);
  state_ = Eigen::Vector4d(params_.start_x, y(rng), 0.0, 0.0);
}

void PlanarGateEnv::switch_target(std::mt19937_64& rng) {
  target_index_ = (target_index_ + 1) % params_.targets.size();
  rebuild_cost();
  reset(rng);
}

EpisodeEvent PlanarGateEnv::step(const Eigen::VectorXd& u, std::mt19937_64& rng) {
  const Eigen::VectorXd next = dynamics_->step(state_, u);
  if (!next.allFinite()) fail(ErrorKind::NumericalDivergence, "planar state is not finite");
  EpisodeEvent event{EpisodeEventKind::Stepped, next};
  const Eigen::Vector2d p = next.head<2>();
  const double margin = 1.0;
  if (has_truth() && truth_violated(next)) {
    event.kind = EpisodeEventKind::ViolatedTruth;
    reset(rng);
  } else if ((p - target()).norm() <= params_.target_radius) {
    event.kind = EpisodeEventKind::ReachedTarget;
    switch_target(rng);
  } else if ((p.array() < -margin).any() || (p.array() > params_.workspace + margin).any()) {
    event.kind = EpisodeEventKind::Reset;
    reset(rng);
  } else {
    state_ = next;
  }
  return event;
}

bool PlanarGateEnv::truth_violated(const Eigen::VectorXd& state) const {
  if (!has_truth()) fail(ErrorKind::NotSupervised, "planar environment is not supervised");
  if (state.size() < 2) fail(ErrorKind::DimensionError, "planar state needs a position");
  return params_.gate.in_wall(state.head<2>());
}

Eigen::MatrixXd PlanarGateEnv::feasible_fallback(const Eigen::VectorXd&) const {
  // Brake to a stop in one step and hold position.
  Eigen::MatrixXd controls = Eigen::MatrixXd::Zero(2, params_.horizon);
  controls.col(0) = -state_.tail<2>() / params_.dt;
  return controls;
}

GateCheckResult PlanarGateEnv::check_gate(const Eigen::VectorXd& theta, const GateCheck& check) const {
  if (!(check.spacing > 0)) fail(ErrorKind::InvalidArgument, "grid spacing must be positive");
  const auto& gate = params_.gate;
  const int cells = static_cast<int>(std::floor(params_.workspace / check.spacing + 1e-9)) + 1;
  GateCheckResult out;
  for (int ix = 0; ix < cells; ++ix) {
    const double x = ix * check.spacing;
    if (std::abs(x - gate.gate_x) > gate.wall_half_thickness) continue;
    for (int iy = 0; iy < cells; ++iy) {
      const double y = iy * check.spacing;
      const double clear = gate.clearance(y);
      const bool wall = clear >= check.wall_margin;
      const bool corridor = clear <= -check.corridor_margin;
      if (!wall && !corridor) continue;
      Eigen::Vector4d s(x, y, 0.0, 0.0);
      const double g = evaluate_g(*constraint_, theta, stationary_trajectory(s, 2, params_.horizon));
      if (wall) {
        ++out.wall_cells;
        if (!(g > 0.0)) ++out.wall_failures;
      } else {
        ++out.corridor_cells;
        if (!(g < 0.0)) ++out.corridor_failures;
      }
    }
  }
  return out;
}

}  // namespace safe_align
