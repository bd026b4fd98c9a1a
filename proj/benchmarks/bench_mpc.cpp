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

#include <benchmark/benchmark.h>

#include "safe_align/envs.hpp"
#include "safe_align/trajopt.hpp"

using namespace safe_align;

namespace {

void BM_PendulumSolve(benchmark::State& state) {
  PendulumEnv::Params params;
  params.noise = false;
  PendulumEnv env(params);
  env.set_state(Eigen::Vector2d(0.5, 0.5));
  const BarrierProblem problem = env.problem(Eigen::Vector2d(-2, -2));
  SolverOptions options;
  options.gradient_tolerance = 1e-10;
  const Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(1, env.horizon());
  for (auto _ : state) benchmark::DoNotOptimize(solve_barrier_mpc(problem, env.state(), warm, options));
}
BENCHMARK(BM_PendulumSolve)->Unit(benchmark::kMillisecond);

void BM_PlanarSolve(benchmark::State& state) {
  PlanarGateEnv env;
  const BarrierProblem problem = env.problem(Eigen::VectorXd::Zero(env.theta_dim()));
  SolverOptions options;
  const Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(2, env.horizon());
  for (auto _ : state) benchmark::DoNotOptimize(solve_barrier_mpc(problem, env.state(), warm, options));
}
BENCHMARK(BM_PlanarSolve)->Unit(benchmark::kMillisecond);

void BM_PendulumGradient(benchmark::State& state) {
  PendulumEnv env;
  env.set_state(Eigen::Vector2d(0.5, 0.5));
  const BarrierProblem problem = env.problem(Eigen::Vector2d(-2, -2));
  const Trajectory traj = rollout(*problem.dynamics, env.state(), Eigen::MatrixXd::Zero(1, env.horizon()));
  for (auto _ : state) benchmark::DoNotOptimize(barrier_gradient(problem, traj));
}
BENCHMARK(BM_PendulumGradient);

}  // namespace

BENCHMARK_MAIN();
