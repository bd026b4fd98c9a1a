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

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <random>

#include "safe_align/alignment.hpp"
#include "safe_align/errors.hpp"
#include "safe_align/experiment.hpp"
#include "test_support.hpp"

using namespace safe_align;

namespace {

using big = boost::multiprecision::cpp_bin_float_50;

/// ln(tau_r rho^r / Vol) / ln(1 - 1/r) in 50-digit arithmetic.
big reference_exponent(double volume, double rho, int r) {
  const big half = big(r) / 2;
  const big log_tau = half * log(boost::math::constants::pi<big>()) - boost::math::lgamma(half + 1);
  const big log_ratio = log_tau + r * log(big(rho)) - log(big(volume));
  return log_ratio / log1p(big(-1) / r);
}

AlignmentConfig pendulum_alignment() {
  return load_experiment_config(SAFE_ALIGN_SOURCE_DIR "/configs/pendulum_wellspec.yaml").alignment;
}

/// Never corrects; optionally satisfied once the step limit is hit.
class SilentSource final : public CorrectionSource {
 public:
  explicit SilentSource(bool satisfied) : satisfied_(satisfied) {}
  HumanInput poll(const CorrectionContext&) override {
    ++polls;
    return {};
  }
  bool satisfied_at_limit() const override { return satisfied_; }
  int polls = 0;

 private:
  bool satisfied_;
};

}  // namespace

TEST(Budget, UnitBallVolume) {
  EXPECT_NEAR(unit_ball_volume(2), M_PI, 1e-15);
  EXPECT_NEAR(unit_ball_volume(3), 4.0 * M_PI / 3.0, 1e-14);
}

TEST(Budget, HandValues) {
  // tau_2 (0.5)^2 / pi = 1/4 and ln(1/4) / ln(1/2) = 2 exactly.
  EXPECT_EQ(max_corrections(M_PI, 0.5, 2), 2);
  EXPECT_EQ(max_corrections(64.0, 0.02, 2), 16);
  EXPECT_NEAR(budget_exponent(64.0, 0.02, 2), 15.636216250077, 1e-9);
}

TEST(Budget, InvalidInputs) {
  for (auto f : {+[] { max_corrections(1.0, 1.0, 2); }, +[] { max_corrections(64.0, 0.02, 1); },
                 +[] { max_corrections(0.0, 0.02, 2); }, +[] { max_corrections(64.0, -1.0, 2); }}) {
    try {
      f();
      ADD_FAILURE() << "expected InvalidBudget";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidBudget);
    }
  }
}

TEST(Budget, MatchesHighPrecisionOnRandomTriples) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 20);
  std::uniform_real_distribution<double> side(1.0, 10.0);
  std::uniform_real_distribution<double> log_rho(std::log(1e-3), std::log(0.1));
  for (int trial = 0; trial < 50; ++trial) {
    const int r = dim(rng);
    double volume = 1.0;
    for (int i = 0; i < r; ++i) volume *= side(rng);
    const double rho = std::exp(log_rho(rng));
    const big exact = reference_exponent(volume, rho, r);
    const double exact_d = exact.convert_to<double>();
    const double ulp = std::nextafter(exact_d, INFINITY) - exact_d;
    EXPECT_LE(std::abs(budget_exponent(volume, rho, r) - exact_d), ulp) << "r=" << r << " rho=" << rho;
    EXPECT_EQ(max_corrections(volume, rho, r), static_cast<int>(ceil(exact).convert_to<double>()));
  }
}

TEST(Misspecification, Examples) {
  const Eigen::Vector2d lo(-6, -6), hi(2, 2);
  EXPECT_FALSE(check_misspecification(Eigen::Vector2d(-2, -2), lo, hi, 0.05));
  EXPECT_TRUE(check_misspecification(Eigen::Vector2d(-5.97, 0), lo, hi, 0.05));
  EXPECT_TRUE(check_misspecification(Eigen::Vector2d(0, 1.96), lo, hi, 0.05));
  EXPECT_FALSE(check_misspecification(Eigen::Vector2d(0.6, 1.0), lo, hi, 0.05));
  EXPECT_TRUE(check_misspecification(Eigen::Vector2d(0.78, 0.2), Eigen::Vector2d(-1, -1), Eigen::Vector2d(0.8, 0.8),
                                     0.05));
}

TEST(InitialState, PendulumBox) {
  const AlignmentState s = initial_state(pendulum_alignment());
  EXPECT_EQ(s.budget, 16);
  EXPECT_EQ(s.iteration, 0);
  EXPECT_LT((s.theta - Eigen::Vector2d(-2, -2)).norm(), 1e-7);
}

TEST(AlignStep, IntegratorCutKeepsCentreOnBoundary) {
  AlignmentConfig config;
  config.c_low = Eigen::Vector2d(-1, -1);
  config.c_high = Eigen::Vector2d(1, 1);
  const AlignmentState s0 = initial_state(config);
  const auto p = safe_align::testing::integrator_problem(2, s0.theta);
  SolverOptions options;
  options.gradient_tolerance = 1e-12;
  const auto plan = solve_barrier_mpc(p, Eigen::Vector2d::Zero(), Eigen::MatrixXd::Zero(2, 1), options);
  const AlignmentState s1 = align_step(s0, p, plan.trajectory, Eigen::Vector2d(1, 0));
  EXPECT_EQ(s1.iteration, 1);
  // theta = 0 gives u* = 0, so the feasibility row has a zero normal and is dropped.
  EXPECT_EQ(s1.polytope.rows(), 5);
  EXPECT_LT(s1.ellipsoid.log_det(), s0.ellipsoid.log_det());
  EXPECT_LE(containment_residual(s1.ellipsoid, s1.polytope), 1e-7);
}

TEST(AlignStep, RedundantCutIsIdempotent) {
  AlignmentConfig config;
  config.c_low = Eigen::Vector2d(-1, -1);
  config.c_high = Eigen::Vector2d(1, 1);
  AlignmentState s = initial_state(config);
  const Cut cut{Eigen::Vector2d(1, 0.5), 0.2, Eigen::Vector2d(0.3, 1), 0.9};
  const Polytope once = apply_cut(s.polytope, cut);
  const Polytope twice = apply_cut(once, cut);
  const Ellipsoid a = mve(once), b = mve(twice);
  EXPECT_LT((a.center - b.center).norm(), 1e-6);
  EXPECT_NEAR(a.log_det(), b.log_det(), 1e-6);
}

TEST(RunAlignment, SilentSourceIsSatisfiedAtLimit) {
  AlignmentConfig config = pendulum_alignment();
  config.max_env_steps = 30;
  PendulumEnv env(safe_align::testing::quiet_pendulum());
  SilentSource source(true);
  const auto result = run_alignment(env, source, config);
  EXPECT_EQ(result.outcome.kind, OutcomeKind::SatisfiedByHuman);
  EXPECT_EQ(result.outcome.env_steps, 30);
  EXPECT_EQ(result.outcome.corrections_used, 0);
  EXPECT_EQ(source.polls, 30);
  EXPECT_LT((result.outcome.final_theta - Eigen::Vector2d(-2, -2)).norm(), 1e-7);
}

TEST(RunAlignment, SilentSourceWithoutVerdictExhausts) {
  AlignmentConfig config = pendulum_alignment();
  config.max_env_steps = 10;
  PendulumEnv env(safe_align::testing::quiet_pendulum());
  SilentSource source(false);
  EXPECT_EQ(run_alignment(env, source, config).outcome.kind, OutcomeKind::BudgetExhausted);
}

TEST(RunAlignment, WellSpecifiedRunKeepsTruthAndShrinks) {
  const ExperimentConfig config = load_experiment_config(SAFE_ALIGN_SOURCE_DIR "/configs/pendulum_wellspec.yaml");
  const Eigen::Vector2d truth(0.6, 1.0);
  int cuts = 0;
  AlignmentObserver observer;
  observer.on_cut = [&](const CutInfo& info) {
    ++cuts;
    EXPECT_TRUE(info.after.polytope.contains(truth, 1e-7));
    EXPECT_EQ(info.after.iteration, info.before.iteration + 1);
    EXPECT_LT(info.after.ellipsoid.log_det(), info.before.ellipsoid.log_det());
    EXPECT_LE(containment_residual(info.after.ellipsoid, info.after.polytope), 1e-7);
    const double b = info.cut.primary_offset;
    EXPECT_LE(std::abs(info.before.theta.dot(info.cut.primary_normal) - b), 1e-6 * (1 + std::abs(b)));
    EXPECT_LT(info.before.theta.dot(info.cut.feasibility_normal), info.cut.feasibility_offset);
  };
  observer.on_solve = [&](const SolveInfo& info) {
    EXPECT_LT(evaluate_g(*info.problem.constraint, info.problem.theta, info.result.trajectory), 0.0);
  };
  const SeedRun run = run_seed(config, 0, observer);
  EXPECT_EQ(cuts, run.result.outcome.corrections_used);
  EXPECT_GT(cuts, 0);
  EXPECT_LE(cuts, run.result.state.budget - 1);
  EXPECT_EQ(static_cast<int>(run.result.state.trace.size()), cuts);
}

TEST(RunAlignment, MisspecifiedBoxIsFlagged) {
  const ExperimentConfig config = load_experiment_config(SAFE_ALIGN_SOURCE_DIR "/configs/pendulum_misspec.yaml");
  const SeedRun run = run_seed(config, 3);
  EXPECT_EQ(run.result.outcome.kind, OutcomeKind::Misspecified);
  EXPECT_EQ(run.result.outcome.corrections_used, run.result.state.budget - 1);
  EXPECT_TRUE(check_misspecification(run.result.outcome.final_theta, config.alignment.c_low,
                                     config.alignment.c_high, config.alignment.epsilon_misspec));
}

TEST(RunAlignment, SameSeedSameTrace) {
  const ExperimentConfig config = load_experiment_config(SAFE_ALIGN_SOURCE_DIR "/configs/pendulum_misspec.yaml");
  const SeedRun a = run_seed(config, 5);
  const SeedRun b = run_seed(config, 5);
  ASSERT_EQ(a.result.state.trace.size(), b.result.state.trace.size());
  for (std::size_t i = 0; i < a.result.state.trace.size(); ++i) {
    EXPECT_EQ(a.result.state.trace[i].theta, b.result.state.trace[i].theta);
    EXPECT_EQ(a.result.state.trace[i].env_step, b.result.state.trace[i].env_step);
  }
  EXPECT_EQ(a.result.outcome.env_steps, b.result.outcome.env_steps);
}

TEST(AlignmentConfig, Validation) {
  AlignmentConfig config = pendulum_alignment();
  config.rho_H = -1;
  EXPECT_THROW(config.validate(), Error);
  config = pendulum_alignment();
  config.c_high = Eigen::Vector3d(1, 1, 1);
  EXPECT_THROW(config.validate(), Error);
}
