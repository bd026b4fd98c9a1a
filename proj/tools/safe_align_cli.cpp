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

// Batch front end: run experiment configs, export constraint grids from
// traces, and summarize output directories.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "safe_align/errors.hpp"
#include "safe_align/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

using safe_align::ErrorKind;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash));
        const auto hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) safe_align::fail(ErrorKind::ConfigError, "seed range '" + part + "' is reversed");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      }
    } catch (const std::logic_error&) {
      safe_align::fail(ErrorKind::ConfigError, "cannot parse seeds '" + text + "'");
    }
  }
  return seeds;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool same_outputs(const safe_align::ExperimentArtifacts& a, const safe_align::ExperimentArtifacts& b) {
  if (safe_align::strip_wall_time(read_file(a.metrics_csv)) != safe_align::strip_wall_time(read_file(b.metrics_csv))) {
    std::cerr << "metrics differ between the two runs\n";
    return false;
  }
  for (std::size_t i = 0; i < a.traces.size(); ++i) {
    if (read_file(a.traces[i]) != read_file(b.traces[i])) {
      std::cerr << a.traces[i].filename().string() << " differs between the two runs\n";
      return false;
    }
  }
  return true;
}

void print_summary(const nlohmann::json& summary) {
  std::printf("%-6s %-18s %11s %9s %12s\n", "seed", "outcome", "corrections", "steps", "distance");
  for (const auto& run : summary.at("runs")) {
    const auto& d = run.at("distance_to_truth");
    std::printf("%-6llu %-18s %11d %9d %12s\n", static_cast<unsigned long long>(run.at("seed").get<std::uint64_t>()),
                run.at("outcome").get<std::string>().c_str(), run.at("corrections_used").get<int>(),
                run.at("env_steps").get<int>(), d.is_null() ? "-" : std::to_string(d.get<double>()).c_str());
  }
}

int cmd_run(const std::string& config_path, const std::string& seeds, const std::string& out, bool no_noise,
            bool deterministic_check, unsigned jobs) {
  auto config = safe_align::load_experiment_config(config_path);
  if (!seeds.empty()) config.seeds = parse_seeds(seeds);
  if (!out.empty()) config.output_dir = out;
  if (no_noise) safe_align::disable_noise(config);
  if (config.interactive()) {
    safe_align::fail(ErrorKind::ConfigError, "interactive configs are served by safe_align_server");
  }

  const auto artifacts = safe_align::run_experiment(config, jobs);
  const auto summary = safe_align::summarize_runs(config, artifacts.runs);
  std::cout << config.name << ": K = " << summary.at("k_budget") << ", " << summary.at("converged") << "/"
            << artifacts.runs.size() << " converged\n";
  print_summary(summary);
  std::cout << "wrote " << artifacts.metrics_csv.string() << ", " << artifacts.summary_json.string() << " and "
            << artifacts.traces.size() << " traces\n";

  if (deterministic_check) {
    auto replay = config;
    replay.output_dir = config.output_dir / ".determinism";
    const auto second = safe_align::run_experiment(replay, jobs);
    const bool same = same_outputs(artifacts, second);
    std::filesystem::remove_all(replay.output_dir);
    if (!same) return kExitRuntime;
    std::cout << "deterministic: rerun reproduced metrics and traces byte for byte\n";
  }
  return 0;
}

int cmd_grid(const std::string& trace_path, const std::string& slice_text, int iteration, const std::string& out) {
  std::ifstream in(trace_path);
  if (!in) safe_align::fail(ErrorKind::ConfigError, "cannot read " + trace_path);
  nlohmann::json header, chosen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    const auto type = j.at("type").get<std::string>();
    if (type == "header") {
      header = j;
      if (iteration == 0) chosen = j;
    } else if (type == "correction" && j.at("iter").get<int>() == iteration) {
      chosen = j;
    } else if (type == "outcome" && iteration < 0) {
      chosen = j;
    }
  }
  if (header.is_null()) safe_align::fail(ErrorKind::ConfigError, trace_path + " has no header line");
  if (chosen.is_null()) safe_align::fail(ErrorKind::ConfigError, "iteration not found in " + trace_path);

  const auto config = safe_align::config_from_json(header.at("config"));
  const auto env = safe_align::make_environment(config);
  const auto values = chosen.at(chosen.at("type") == "outcome" ? "final_theta" : "theta").get<std::vector<double>>();
  const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  const auto problem = env->problem(theta);
  const auto slice = safe_align::parse_slice(slice_text, problem.dynamics->state_dim());
  const auto grid = safe_align::export_constraint_grid(theta, *problem.constraint, env->horizon(),
                                                       env->control_dim(), slice);
  auto json = safe_align::grid_to_json(grid);
  json["theta"] = values;
  if (out.empty()) {
    std::cout << json.dump() << '\n';
  } else {
    std::ofstream file(out);
    file << json.dump() << '\n';
    if (!file) safe_align::fail(ErrorKind::InvalidArgument, "cannot write " + out);
  }
  return 0;
}

int cmd_summarize(const std::string& dir) {
  const auto summary = safe_align::summarize_directory(dir);
  print_summary(summary);
  for (const auto& [kind, count] : summary.at("outcomes").items()) std::cout << kind << ": " << count << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safe_align: learn safety constraints from directional corrections"};
  app.require_subcommand(1);

  std::string config_path, seeds, out;
  bool no_noise = false, deterministic_check = false;
  unsigned jobs = 0;
  auto* run = app.add_subcommand("run", "run every seed of an experiment config");
  run->add_option("config", config_path, "YAML experiment config")->required();
  run->add_option("--seeds", seeds, "seed list, e.g. 0-9 or 1,4,7 (overrides the config)");
  run->add_option("--out", out, "output directory (overrides the config)");
  run->add_flag("--no-noise", no_noise, "disable process noise");
  run->add_flag("--deterministic-check", deterministic_check, "rerun and compare outputs byte for byte");
  run->add_option("--jobs", jobs, "seeds run in parallel (0: one per core)");

  std::string trace_path, slice_text, grid_out;
  int iteration = -1;
  auto* grid = app.add_subcommand("grid", "sample g over a 2D state slice for a traced theta");
  grid->add_option("trace", trace_path, "trace_<seed>.jsonl")->required();
  grid->add_option("slice", slice_text, "e.g. x0=0:6:61,x1=0:6:61")->required();
  grid->add_option("--iteration", iteration, "correction index (0: initial theta, default: final)");
  grid->add_option("--out", grid_out, "output file (default: stdout)");

  std::string dir;
  auto* summarize = app.add_subcommand("summarize", "summarize the traces in an output directory");
  summarize->add_option("dir", dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seeds, out, no_noise, deterministic_check, jobs);
    if (*grid) return cmd_grid(trace_path, slice_text, iteration, grid_out);
    return cmd_summarize(dir);
  } catch (const safe_align::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    const bool input = e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::UnsupportedSlice ||
                       (*grid && (e.kind() == ErrorKind::InvalidArgument || e.kind() == ErrorKind::DimensionError));
    return input ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
