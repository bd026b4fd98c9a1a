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
#include <random>

#include "safe_align/geometry.hpp"

using namespace safe_align;

namespace {

Polytope polygon(int sides) {
  Eigen::MatrixXd A(sides, 2);
  for (int k = 0; k < sides; ++k) A.row(k) << std::cos(2 * M_PI * k / sides), std::sin(2 * M_PI * k / sides);
  return Polytope(A, Eigen::VectorXd::Ones(sides));
}

// A box in R^r cut `cuts` times by random half-spaces just missing its centre, the
// shape the alignment loop produces.
Polytope cut_box(int r, int cuts) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Polytope p = initial_box(Eigen::VectorXd::Constant(r, -1.0), Eigen::VectorXd::Constant(r, 1.0));
  for (int i = 0; i < cuts; ++i) {
    Eigen::VectorXd n(r);
    for (int j = 0; j < r; ++j) n[j] = normal(rng);
    n.normalize();
    p = p.with_row(n, 0.02 + 0.05 * std::abs(normal(rng)));
  }
  return p;
}

void BM_MveBox2D(benchmark::State& state) {
  const Polytope p = initial_box(Eigen::Vector2d(-6, -6), Eigen::Vector2d(2, 2));
  for (auto _ : state) benchmark::DoNotOptimize(mve(p));
}
BENCHMARK(BM_MveBox2D);

void BM_MvePolygon(benchmark::State& state) {
  const Polytope p = polygon(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mve(p));
}
BENCHMARK(BM_MvePolygon)->Arg(8)->Arg(64)->Arg(256);

void BM_MveCutBox(benchmark::State& state) {
  const Polytope p = cut_box(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(mve(p));
}
BENCHMARK(BM_MveCutBox)->Args({2, 30})->Args({20, 10})->Args({20, 40})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
