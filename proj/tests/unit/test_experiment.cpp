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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "safe_align/errors.hpp"
#include "safe_align/experiment.hpp"

using namespace safe_align;

namespace {

const std::string kConfigs = SAFE_ALIGN_SOURCE_DIR "/configs/";

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("safe_align_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Config, ShippedConfigsParse) {
  const auto well = load_experiment_config(kConfigs + "pendulum_wellspec.yaml");
  EXPECT_EQ(well.environment, "pendulum");
  EXPECT_EQ(well.seeds.size(), 10u);
  EXPECT_EQ(well.alignment.c_low, Eigen::Vector2d(-6, -6));
  ASSERT_TRUE(well.oracle.has_value());
  EXPECT_EQ(truth_theta(well), Eigen::VectorXd(Eigen::Vector2d(0.6, 1.0)));
  EXPECT_EQ(well.keys.size(), 2u);

  const auto mis = load_experiment_config(kConfigs + "pendulum_misspec.yaml");
  EXPECT_EQ(mis.alignment.c_high, Eigen::Vector2d(0.8, 0.8));

  const auto planar = load_experiment_config(kConfigs + "planar_gate.yaml");
  EXPECT_EQ(planar.environment, "planar_gate");
  EXPECT_EQ(planar.alignment.c_low.size(), 20);
  EXPECT_EQ(planar.keys.size(), 4u);

  const auto interactive = load_experiment_config(kConfigs + "planar_gate_interactive.yaml");
  EXPECT_TRUE(interactive.interactive());
  EXPECT_TRUE(interactive.seeds.empty());
}

TEST(Config, UnknownKeysAreReportedWithTheirPath) {
  const std::string yaml = R"(
name: x
environment: {id: pendulum, params: {horizon: 40, colour: red}}
alignment: {c_low: [-6, -6], c_high: [2, 2], rho: 0.02}
oracle: {intent_radius: 0.02}
seeds: [0]
)";
  try {
    parse_experiment_config(yaml);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    const std::string what = e.what();
    EXPECT_NE(what.find("colour"), std::string::npos) << what;
    EXPECT_NE(what.find("rho"), std::string::npos) << what;
  }
}

TEST(Config, WrongTypesAndValues) {
  EXPECT_EQ(kind_of([] { parse_experiment_config("name: [1, 2\n"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] { parse_experiment_config("- a\n- b\n"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] {
              parse_experiment_config(
                  "environment: {id: pendulum}\nalignment: {c_low: [-6, -6], c_high: [2, 2], rho_H: abc}\n");
            }),
            ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] { parse_experiment_config("environment: {id: quadrotor}\n"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] {
              parse_experiment_config("environment: {id: pendulum}\nalignment: {c_low: [2, 2], c_high: [-6, -6]}\n");
            }),
            ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] { load_experiment_config("/nonexistent/config.yaml"); }), ErrorKind::ConfigError);
}

TEST(Config, JsonRoundTrip) {
  for (const char* file : {"pendulum_wellspec.yaml", "planar_gate.yaml", "planar_gate_interactive.yaml"}) {
    const auto config = load_experiment_config(kConfigs + file);
    const auto json = config_to_json(config);
    EXPECT_EQ(config_to_json(config_from_json(json)), json) << file;
  }
}

TEST(Config, TruthAndEnvironment) {
  const auto config = load_experiment_config(kConfigs + "planar_gate.yaml");
  const auto env = make_environment(config);
  EXPECT_EQ(env->theta_dim(), 20);
  EXPECT_EQ(truth_theta(config), dynamic_cast<const PlanarGateEnv&>(*env).truth_theta());
}

TEST(Metrics, HeaderOrder) {
  EXPECT_EQ(metrics_csv_header(2), "seed,iteration,log_det_H,theta_0,theta_1,distance_to_truth,area_2d,wall_time_ms");
  MetricsRow row;
  row.seed = 3;
  row.iteration = 1;
  row.log_det_H = 0.5;
  row.theta = Eigen::Vector2d(-2, 0.25);
  row.wall_time_ms = 1.5;
  EXPECT_EQ(metrics_csv_row(row), "3,1,0.5,-2,0.25,,,1.5");
  EXPECT_EQ(strip_wall_time(metrics_csv_header(2) + "\n" + metrics_csv_row(row) + "\n"),
            "seed,iteration,log_det_H,theta_0,theta_1,distance_to_truth,area_2d\n3,1,0.5,-2,0.25,,\n");
}

TEST(Experiment, EmptySeedListWritesHeaderOnly) {
  auto config = load_experiment_config(kConfigs + "pendulum_misspec.yaml");
  config.seeds.clear();
  config.output_dir = scratch_dir("empty");
  const auto artifacts = run_experiment(config, 1);
  EXPECT_EQ(read_file(artifacts.metrics_csv), metrics_csv_header(2) + "\n");
  const auto summary = nlohmann::json::parse(read_file(artifacts.summary_json));
  EXPECT_TRUE(summary.at("runs").empty());
  EXPECT_TRUE(artifacts.traces.empty());
  std::filesystem::remove_all(config.output_dir);
}

TEST(Experiment, InteractiveConfigsAreNotBatchRun) {
  auto config = load_experiment_config(kConfigs + "planar_gate_interactive.yaml");
  EXPECT_EQ(kind_of([&] { run_experiment(config, 1); }), ErrorKind::ConfigError);
}

TEST(Experiment, ArtifactsAreDeterministicAndSummarisable) {
  auto config = load_experiment_config(kConfigs + "pendulum_misspec.yaml");
  config.seeds = {0, 1};
  config.output_dir = scratch_dir("det_a");
  const auto a = run_experiment(config, 2);
  config.output_dir = scratch_dir("det_b");
  const auto b = run_experiment(config, 1);
  EXPECT_EQ(strip_wall_time(read_file(a.metrics_csv)), strip_wall_time(read_file(b.metrics_csv)));
  ASSERT_EQ(a.traces.size(), 2u);
  for (std::size_t i = 0; i < a.traces.size(); ++i) {
    EXPECT_EQ(read_file(a.traces[i]), read_file(b.traces[i]));
  }

  std::ifstream trace(a.traces[0]);
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(trace, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines.front().at("type"), "header");
  EXPECT_EQ(lines.front().at("k_budget"), 12);
  EXPECT_EQ(lines.back().at("type"), "outcome");
  EXPECT_EQ(lines.back().at("kind"), "Misspecified");
  EXPECT_EQ(lines.size(), 2u + lines.back().at("corrections_used").get<std::size_t>());

  const auto summary = summarize_directory(a.metrics_csv.parent_path());
  EXPECT_EQ(summary.at("runs").size(), 2u);
  std::filesystem::remove_all(a.metrics_csv.parent_path());
  std::filesystem::remove_all(b.metrics_csv.parent_path());
}

TEST(Grid, ParseSlice) {
  const GridSlice s = parse_slice("x0=0:6:61,x1=-1:2,x2=0.5", 4);
  ASSERT_EQ(s.ranges.size(), 2u);
  EXPECT_EQ(s.ranges[0].index, 0);
  EXPECT_EQ(s.ranges[0].samples, 61);
  EXPECT_EQ(s.ranges[1].samples, 41);
  EXPECT_DOUBLE_EQ(s.fixed[2], 0.5);
  EXPECT_DOUBLE_EQ(s.fixed[3], 0.0);
  EXPECT_THROW(parse_slice("x9=0", 4), Error);
  EXPECT_THROW(parse_slice("x0=0,x0=1", 4), Error);
  EXPECT_THROW(parse_slice("y=1", 4), Error);
}

TEST(Grid, ZeroWeightsGiveConstantMinusOne) {
  PlanarGateEnv env;
  const auto grid = export_constraint_grid(Eigen::VectorXd::Zero(20), *env.constraint(), env.horizon(), 2,
                                           parse_slice("x0=0:10:21,x1=0:10:21", 4));
  EXPECT_EQ(grid.values.rows(), 21);
  EXPECT_EQ(grid.values.cols(), 21);
  EXPECT_LT((grid.values.array() + 1.0).abs().maxCoeff(), 1e-15);
  EXPECT_FALSE(grid.zero_mask.any());
  EXPECT_TRUE(grid.contour.empty());
}

TEST(Grid, PendulumContourIsTheTruthLine) {
  PendulumEnv env;
  const auto grid = export_constraint_grid(Eigen::Vector2d(0.6, 1.0), *env.constraint(), env.horizon(), 1,
                                           parse_slice("x0=0:6:61,x1=0:6:61", 2));
  ASSERT_FALSE(grid.contour.empty());
  for (const auto& [p, q] : grid.contour) {
    EXPECT_NEAR(0.6 * p.x() + p.y(), 3.0, 1e-12);
    EXPECT_NEAR(0.6 * q.x() + q.y(), 3.0, 1e-12);
  }
  for (int j = 0; j < 61; ++j) {
    for (int i = 0; i < 61; ++i) {
      const double x = 0.1 * i, y = 0.1 * j;
      EXPECT_NEAR(grid.values(j, i), 0.6 * x + y - 3.0, 1e-12);
      if (std::abs(0.6 * x + y - 3.0) > 0.2) EXPECT_FALSE(grid.zero_mask(j, i));
    }
  }
  EXPECT_TRUE(grid.zero_mask.any());
  const auto json = grid_to_json(grid);
  EXPECT_EQ(json.at("g").size(), 61u);
  EXPECT_EQ(json.at("zero_mask").size(), 61u);
}

TEST(Grid, UnsupportedSlices) {
  PendulumEnv env;
  const auto grid = [&](const std::string& s) {
    return [&env, s] {
      export_constraint_grid(Eigen::Vector2d(0.6, 1.0), *env.constraint(), env.horizon(), 1, parse_slice(s, 2));
    };
  };
  EXPECT_EQ(kind_of(grid("x0=6:0:61,x1=0:6:61")), ErrorKind::UnsupportedSlice);
  EXPECT_EQ(kind_of(grid("x0=0:6:61,x1=3")), ErrorKind::UnsupportedSlice);
  EXPECT_EQ(kind_of(grid("x0=0:6:1,x1=0:6:61")), ErrorKind::UnsupportedSlice);
  EXPECT_EQ(kind_of(grid("x0=0:0:5,x1=0:6:61")), ErrorKind::UnsupportedSlice);
}

TEST(Grid, MarchingSquaresSaddleAndCorner) {
  Eigen::VectorXd xs(2), ys(2);
  xs << 0, 1;
  ys << 0, 1;
  Eigen::MatrixXd corner(2, 2);
  corner << -1, 1, 1, 1;  // only (0,0) negative
  const auto seg = zero_contour(xs, ys, corner);
  ASSERT_EQ(seg.size(), 1u);
  for (const auto& p : {seg[0].first, seg[0].second}) EXPECT_NEAR(p.x() + p.y(), 0.5, 1e-15);
  Eigen::MatrixXd saddle(2, 2);
  saddle << -1, 1, 1, -1;
  EXPECT_EQ(zero_contour(xs, ys, saddle).size(), 2u);
}
