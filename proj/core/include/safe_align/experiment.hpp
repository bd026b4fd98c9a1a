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
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "safe_align/alignment.hpp"
#include "safe_align/envs.hpp"
#include "safe_align/oracle.hpp"

namespace safe_align {

/// Correction key id -> control-space direction. Lives with the environment
/// so clients only ever send key ids.
using KeyMap = std::map<std::string, Eigen::VectorXd>;

/// up [0,1], down [0,-1], left [-1,0], right [1,0] for 2D controls;
/// up [1], down [-1] for scalar controls.
KeyMap default_key_map(int control_dim);

struct ExperimentConfig {
  std::string name;
  /// "pendulum" or "planar_gate".
  std::string environment = "pendulum";
  PendulumEnv::Params pendulum;
  PlanarGateEnv::Params planar;
  KeyMap keys;
  AlignmentConfig alignment;
  /// Simulated corrector; empty for interactive configs.
  std::optional<OracleConfig> oracle;
  /// The oracle rng for seed s is seeded with s + oracle_seed_offset.
  std::uint64_t oracle_seed_offset = 1000;
  /// Convergence test for the planar environment (the pendulum uses the
  /// intent ball around theta_H).
  GateCheck gate_check;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "out";

  bool interactive() const { return !oracle.has_value(); }
};

/// Parses and validates a YAML document. Unknown keys, wrong types and
/// out-of-range values are collected and reported together as ConfigError.
ExperimentConfig parse_experiment_config(const std::string& yaml_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Every effective parameter, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Inverse of config_to_json (used when replaying a trace header).
ExperimentConfig config_from_json(const nlohmann::json& json);

std::unique_ptr<Environment> make_environment(const ExperimentConfig& config);

/// Ground-truth theta for supervised configs, empty otherwise.
Eigen::VectorXd truth_theta(const ExperimentConfig& config);

/// Disables process noise in whichever environment the config selects.
void disable_noise(ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Runs

struct MetricsRow {
  std::uint64_t seed = 0;
  int iteration = 0;
  double log_det_H = 0.0;
  Eigen::VectorXd theta;
  std::optional<double> distance_to_truth;
  std::optional<double> area_2d;
  double wall_time_ms = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  AlignmentResult result;
  /// Header, one record per correction, and the outcome line.
  std::vector<nlohmann::json> trace;
  std::vector<MetricsRow> metrics;
  std::optional<double> final_distance;
};

/// One oracle-driven alignment run. `observer` hooks are chained after the
/// ones that collect metrics.
SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed,
                 const AlignmentObserver& observer = {});

/// Trace lines for a finished run (header, corrections, outcome).
std::vector<nlohmann::json> trace_records(const ExperimentConfig& config, std::uint64_t seed,
                                          const AlignmentState& initial,
                                          const AlignmentResult& result,
                                          const std::optional<Eigen::VectorXd>& truth);

/// Fixed column order:
///   seed, iteration, log_det_H, theta_0 .. theta_{r-1}, distance_to_truth,
///   area_2d, wall_time_ms
/// Missing values are written as empty fields.
std::string metrics_csv_header(int theta_dim);
std::string metrics_csv_row(const MetricsRow& row);

nlohmann::json summarize_runs(const ExperimentConfig& config, const std::vector<SeedRun>& runs);

struct ExperimentArtifacts {
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_json;
  std::vector<std::filesystem::path> traces;
  std::vector<SeedRun> runs;
};

/// Runs every seed (in parallel, up to `jobs` at a time; 0 picks the hardware
/// concurrency) and writes trace_<seed>.jsonl, metrics.csv and summary.json
/// into the output directory. Throws ConfigError for interactive configs.
ExperimentArtifacts run_experiment(const ExperimentConfig& config, unsigned jobs = 0);

/// Drops the wall_time_ms column so two runs can be compared byte for byte.
std::string strip_wall_time(const std::string& metrics_csv);

/// Rebuilds a per-seed summary from the trace files in a directory.
nlohmann::json summarize_directory(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Constraint grids

struct AxisRange {
  int index = 0;
  double min = 0.0;
  double max = 1.0;
  int samples = 2;
};

/// A 2D slice through state space: every state coordinate is fixed except
/// the two ranged ones.
struct GridSlice {
  Eigen::VectorXd fixed;
  std::vector<AxisRange> ranges;
};

/// "x0=0:6:61,x1=0:6:61,x2=0,x3=0": ranged axes are min:max:samples, the
/// rest are fixed values. Coordinates not mentioned are fixed at 0.
GridSlice parse_slice(const std::string& text, int state_dim);

struct ConstraintGrid {
  AxisRange x;
  AxisRange y;
  /// values(j, i) = g at (x_i, y_j).
  Eigen::MatrixXd values;
  /// Cells touching the 0-level set: a sign change to the right or below,
  /// or an exact zero.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> zero_mask;
  /// Marching-squares segments of the 0-level set, as point pairs.
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> contour;
};

/// g_theta evaluated on stationary trajectories (every predicted state equal
/// to the grid point, zero controls). Throws UnsupportedSlice unless exactly
/// two axes are ranged with min < max and at least two samples each.
ConstraintGrid export_constraint_grid(const Eigen::VectorXd& theta,
                                      const FeatureConstraint& constraint, int horizon,
                                      int control_dim, const GridSlice& slice);

nlohmann::json grid_to_json(const ConstraintGrid& grid);

/// Marching squares over a sampled scalar field (values(j, i) at (xs_i, ys_j)).
std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> zero_contour(
    const Eigen::VectorXd& xs, const Eigen::VectorXd& ys, const Eigen::MatrixXd& values);

}  // namespace safe_align
