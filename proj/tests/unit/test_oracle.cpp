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

#include <gtest/gtest.h>

#include <random>

#include "safe_align/errors.hpp"
#include "safe_align/oracle.hpp"
#include "test_support.hpp"

using namespace safe_align;
using safe_align::testing::integrator_problem;

namespace {

/// Plan of the one-step integrator whose truth value g = theta^T u - 3 equals `g`.
Trajectory plan_with_margin(const Eigen::Vector2d& theta, double g, const Eigen::Vector2d& along) {
  const Eigen::Vector2d u = along * ((3.0 + g) / theta.dot(along));
  return rollout(*integrator_problem(2, theta).dynamics, Eigen::Vector2d::Zero(), u);
}

/// First draw of the oracle's uniform for a given seed.
double first_draw(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace

TEST(Oracle, NoCorrectionOutsideMarginBand) {
  const Eigen::Vector2d theta_H(0.6, 1.0);
  const auto truth = integrator_problem(2, theta_H);
  OracleConfig config{theta_H, 0.02, 0.25, 1.0, 0};
  const Trajectory far = plan_with_margin(theta_H, -0.5, Eigen::Vector2d(1, 1));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    EXPECT_FALSE(maybe_correct(config, truth, far, 0, rng).has_value());
  }
}

TEST(Oracle, NearBoundaryCorrectsAlongNegativeGradientSign) {
  const Eigen::Vector2d theta_H(0.6, 1.0);
  const auto truth = integrator_problem(2, theta_H);
  OracleConfig config{theta_H, 0.02, 0.25, 0.3, 0};
  const Trajectory near = plan_with_margin(theta_H, -0.1, Eigen::Vector2d(1, 0.2));
  const Eigen::VectorXd expected = (-barrier_gradient(truth, near)).array().sign();
  int fired = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const auto event = maybe_correct(config, truth, near, 7, rng);
    EXPECT_EQ(event.has_value(), first_draw(seed) < 0.3) << seed;
    ++checked;
    if (!event) continue;
    ++fired;
    EXPECT_EQ(event->direction, expected);
    EXPECT_EQ(event->step_index, 7);
  }
  EXPECT_GT(fired, 30);
  EXPECT_LT(fired, 90);
  EXPECT_EQ(checked, 200);
}

TEST(Oracle, DirectionNeverIncreasesTheTruthBarrierToFirstOrder) {
  const Eigen::Vector2d theta_H(0.6, 1.0);
  const auto truth = integrator_problem(2, theta_H);
  OracleConfig config{theta_H, 0.02, 10.0, 1.0, 0};
  std::mt19937_64 sampler(11);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> margin(-2.0, -1e-3);
  for (int i = 0; i < 100; ++i) {
    const double a = angle(sampler);
    const Eigen::Vector2d along(std::cos(a), std::sin(a));
    if (std::abs(theta_H.dot(along)) < 0.1) continue;
    const Trajectory plan = plan_with_margin(theta_H, margin(sampler), along);
    std::mt19937_64 rng(i);
    const auto event = maybe_correct(config, truth, plan, 0, rng);
    ASSERT_TRUE(event.has_value());
    const Eigen::VectorXd grad = barrier_gradient(truth, plan);
    EXPECT_GE(-grad.head(2).dot(event->direction), 0.0);
    EXPECT_NEAR(-grad.head(2).dot(event->direction), grad.head(2).lpNorm<1>(), 1e-12);
  }
}

TEST(Oracle, ConvergenceIsAClosedBall) {
  OracleConfig config{Eigen::Vector2d(0, 0), 0.02, 0.25, 0.3, 0};
  EXPECT_TRUE(is_converged(config, Eigen::Vector2d(0, 0)));
  EXPECT_TRUE(is_converged(config, Eigen::Vector2d(0.02, 0)));
  EXPECT_FALSE(is_converged(config, Eigen::Vector2d(0.02, 1e-9)));
  config.theta_H = Eigen::Vector2d(0.6, 1.0);
  EXPECT_TRUE(is_converged(config, Eigen::Vector2d(0.6, 1.0)));
  EXPECT_FALSE(is_converged(config, Eigen::Vector2d(-2, -2)));
  EXPECT_THROW(is_converged(config, Eigen::Vector3d(0, 0, 0)), Error);
}

TEST(Oracle, ConfigValidation) {
  OracleConfig config{Eigen::Vector2d(0.6, 1.0), 0.02, 0.25, 1.5, 0};
  EXPECT_THROW(config.validate(), Error);
  config.p_correct = 0.3;
  config.epsilon_g = -1;
  EXPECT_THROW(config.validate(), Error);
}

TEST(Oracle, CorrectorRecordsEvents) {
  PendulumEnv env(safe_align::testing::quiet_pendulum());
  OracleConfig config{Eigen::Vector2d(0.6, 1.0), 0.02, 10.0, 1.0, 0};
  OracleCorrector oracle(config, env.truth_problem());
  env.set_state(Eigen::Vector2d(1.0, 1.0));
  const BarrierProblem problem = env.problem(Eigen::Vector2d(-2, -2));
  const Trajectory plan = rollout(*problem.dynamics, env.state(), Eigen::MatrixXd::Zero(1, env.horizon()));
  AlignmentState state;
  const CorrectionContext context{env, state, problem, plan, 3};
  const HumanInput input = oracle.poll(context);
  EXPECT_EQ(input.kind, InputKind::Correction);
  ASSERT_EQ(oracle.events().size(), 1u);
  EXPECT_EQ(oracle.events()[0].step_index, 3);
  EXPECT_EQ(*oracle.reference_theta(), config.theta_H);
  EXPECT_TRUE(oracle.declares_converged(Eigen::Vector2d(0.6, 1.01)));
}
