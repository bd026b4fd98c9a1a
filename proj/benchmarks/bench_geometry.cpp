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

#include <cmath>

#include "safe_align/envs.hpp"
#include "safe_align/geometry.hpp"

using namespace safe_align;

namespace {

void BM_PolygonArea(benchmark::State& state) {
  const int sides = static_cast<int>(state.range(0));
  Eigen::MatrixXd A(sides, 2);
  for (int k = 0; k < sides; ++k) A.row(k) << std::cos(2 * M_PI * k / sides), std::sin(2 * M_PI * k / sides);
  const Polytope p(A, Eigen::VectorXd::Ones(sides));
  for (auto _ : state) benchmark::DoNotOptimize(polygon_area_2d(p));
}
BENCHMARK(BM_PolygonArea)->Arg(4)->Arg(36)->Arg(256);

void BM_BuildCutPendulum(benchmark::State& state) {
  PendulumEnv::Params params;
  params.noise = false;
  PendulumEnv env(params);
  env.set_state(Eigen::Vector2d(0.5, 0.5));
  const BarrierProblem problem = env.problem(Eigen::Vector2d(-2, -2));
  const Trajectory plan =
      rollout(*problem.dynamics, env.state(), Eigen::MatrixXd::Constant(1, env.horizon(), 0.1));
  const Eigen::VectorXd a = Eigen::VectorXd::Ones(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_cut(*problem.dynamics, *problem.cost, *problem.constraint, problem.gamma, plan, a));
  }
}
BENCHMARK(BM_BuildCutPendulum);

void BM_BuildCutPlanar(benchmark::State& state) {
  PlanarGateEnv env;
  const BarrierProblem problem = env.problem(Eigen::VectorXd::Zero(env.theta_dim()));
  const Trajectory plan =
      rollout(*problem.dynamics, env.state(), Eigen::MatrixXd::Constant(2, env.horizon(), 0.1));
  const Eigen::VectorXd a = Eigen::Vector2d(0, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_cut(*problem.dynamics, *problem.cost, *problem.constraint, problem.gamma, plan, a));
  }
}
BENCHMARK(BM_BuildCutPlanar);

}  // namespace

BENCHMARK_MAIN();
