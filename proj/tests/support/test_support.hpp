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
#include <functional>
#include <memory>

#include "safe_align/constraints.hpp"
#include "safe_align/dynamics.hpp"
#include "safe_align/envs.hpp"
#include "safe_align/trajopt.hpp"

namespace safe_align::testing {

/// x_{t+1} = A x_t + B u_t.
class LinearDynamics final : public DynamicsModel {
 public:
  LinearDynamics(Eigen::MatrixXd A, Eigen::MatrixXd B) : A_(std::move(A)), B_(std::move(B)) {}

  int state_dim() const override { return static_cast<int>(A_.rows()); }
  int control_dim() const override { return static_cast<int>(B_.cols()); }
  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override {
    return A_ * x + B_ * u;
  }
  Jacobians step_jacobians(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    return {A_, B_};
  }

 private:
  Eigen::MatrixXd A_;
  Eigen::MatrixXd B_;
};

/// One-step integrator x_1 = u_0 in R^dim with J = |u_0|^2 and
/// g = -bound + theta^T x_1.
inline BarrierProblem integrator_problem(int dim, const Eigen::VectorXd& theta, double gamma = 0.1,
                                         double bound = 3.0) {
  BarrierProblem p;
  p.dynamics = std::make_shared<LinearDynamics>(Eigen::MatrixXd::Zero(dim, dim),
                                                Eigen::MatrixXd::Identity(dim, dim));
  p.cost = std::make_shared<QuadraticCost>(1, Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim),
                                           Eigen::MatrixXd::Identity(dim, dim),
                                           Eigen::MatrixXd::Zero(dim, dim));
  p.constraint = std::make_shared<AffineStateConstraint>(dim, bound, 1);
  p.theta = theta;
  p.gamma = gamma;
  return p;
}

/// Central differences of a scalar function of a vector.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& reference, const Eigen::VectorXd& value) {
  const double scale = std::max({reference.norm(), value.norm(), 1e-12});
  return (reference - value).norm() / scale;
}

inline PendulumEnv::Params quiet_pendulum() {
  PendulumEnv::Params p;
  p.noise = false;
  return p;
}

}  // namespace safe_align::testing
