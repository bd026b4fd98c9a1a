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

#include "safe_align/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "safe_align/errors.hpp"

namespace safe_align {

namespace {

constexpr int kTraceVersion = 1;

// Reads one YAML mapping, remembering which keys were consumed so the rest
// can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path, std::vector<std::string>& diagnostics)
      : node_(std::move(node)), path_(std::move(path)), diagnostics_(diagnostics) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      error("expected a mapping");
      node_ = YAML::Node();
    }
  }

  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  ~Section() {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& entry : node_) {
      const auto key = entry.first.as<std::string>("");
      if (!seen_.count(key)) diagnostics_.push_back(join(key) + ": unknown key");
    }
  }

  bool has(const std::string& key) {
    const YAML::Node value = raw(key);
    return value && !value.IsNull();
  }

  YAML::Node raw(const std::string& key) {
    seen_.insert(key);
    const YAML::Node& node = node_;
    if (!node || !node.IsMap()) return YAML::Node();
    return node[key];
  }

  std::string child_path(const std::string& key) const { return join(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const YAML::Node value = raw(key);
    if (!value.IsScalar()) {
      diagnostics_.push_back(join(key) + ": expected a scalar");
      return;
    }
    try {
      out = value.as<T>();
    } catch (const YAML::Exception&) {
      diagnostics_.push_back(join(key) + ": cannot convert '" + value.Scalar() + "'");
    }
  }

  void read_vector(const std::string& key, Eigen::VectorXd& out, int expected = -1) {
    if (!has(key)) return;
    auto parsed = to_vector(raw(key), join(key));
    if (!parsed) return;
    if (expected >= 0 && parsed->size() != expected) {
      diagnostics_.push_back(join(key) + ": expected " + std::to_string(expected) + " values, got " +
                             std::to_string(parsed->size()));
      return;
    }
    out = *parsed;
  }

  template <int N>
  void read_fixed(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    Eigen::VectorXd v = out;
    read_vector(key, v, N);
    out = v;
  }

  std::optional<Eigen::VectorXd> to_vector(const YAML::Node& value, const std::string& where) {
    if (!value.IsSequence()) {
      diagnostics_.push_back(where + ": expected a list of numbers");
      return std::nullopt;
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(value.size()));
    for (std::size_t i = 0; i < value.size(); ++i) {
      try {
        v[static_cast<Eigen::Index>(i)] = value[i].as<double>();
      } catch (const YAML::Exception&) {
        diagnostics_.push_back(where + "[" + std::to_string(i) + "]: expected a number");
        return std::nullopt;
      }
    }
    return v;
  }

  void error(const std::string& message) {
    diagnostics_.push_back((path_.empty() ? std::string("<root>") : path_) + ": " + message);
  }

  std::vector<std::string>& diagnostics() { return diagnostics_; }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  std::vector<std::string>& diagnostics_;
  std::set<std::string> seen_;
};

void read_solver(Section& s, SolverOptions& o) {
  s.read("max_iterations", o.max_iterations);
  s.read("gradient_tolerance", o.gradient_tolerance);
  s.read("line_search_shrink", o.line_search_shrink);
  s.read("initial_step", o.initial_step);
  s.read("memory", o.memory);
  s.read("newton_polish_steps", o.newton_polish_steps);
  s.read("polish_threshold", o.polish_threshold);
}

void read_pendulum(Section& s, PendulumEnv::Params& p) {
  s.read("mass", p.physics.mass);
  s.read("length", p.physics.length);
  s.read("damping", p.physics.damping);
  s.read("gravity", p.physics.gravity);
  s.read("dt", p.physics.dt);
  s.read("horizon", p.horizon);
  s.read_fixed("target", p.target);
  s.read("control_weight", p.control_weight);
  s.read_fixed("terminal_weight", p.terminal_weight);
  s.read("bound", p.bound);
  s.read("gamma", p.gamma);
  s.read_fixed("noise_variance", p.noise_variance);
  s.read("noise", p.noise);
  s.read_fixed("reset_low", p.reset_low);
  s.read_fixed("reset_high", p.reset_high);
  s.read("reset_margin", p.reset_margin);
  s.read("target_radius", p.target_radius);
  const YAML::Node truth = s.raw("truth_theta");
  if (truth && truth.IsNull()) {
    p.truth_theta.reset();
  } else if (truth) {
    Eigen::Vector2d t = p.truth_theta.value_or(Eigen::Vector2d::Zero());
    s.read_fixed("truth_theta", t);
    p.truth_theta = t;
  }
}

void read_planar(Section& s, PlanarGateEnv::Params& p) {
  s.read("dt", p.dt);
  s.read("horizon", p.horizon);
  s.read("workspace", p.workspace);
  if (s.has("gate")) {
    Section g(s.raw("gate"), s.child_path("gate"), s.diagnostics());
    g.read("gate_x", p.gate.gate_x);
    g.read("gate_y", p.gate.gate_y);
    g.read("opening_half_width", p.gate.opening_half_width);
    g.read("wall_half_thickness", p.gate.wall_half_thickness);
  }
  s.read("start_x", p.start_x);
  s.read("start_y_low", p.start_y_low);
  s.read("start_y_high", p.start_y_high);
  if (s.has("targets")) {
    const YAML::Node list = s.raw("targets");
    if (!list.IsSequence()) {
      s.diagnostics().push_back(s.child_path("targets") + ": expected a list of [x, y] pairs");
    } else {
      std::vector<Eigen::Vector2d> targets;
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = s.child_path("targets") + "[" + std::to_string(i) + "]";
        auto v = s.to_vector(list[i], where);
        if (!v) continue;
        if (v->size() != 2) {
          s.diagnostics().push_back(where + ": expected 2 values");
          continue;
        }
        targets.emplace_back((*v)[0], (*v)[1]);
      }
      p.targets = targets;
    }
  }
  s.read("target_radius", p.target_radius);
  s.read("position_weight", p.position_weight);
  s.read("velocity_weight", p.velocity_weight);
  s.read("control_weight", p.control_weight);
  s.read("terminal_weight", p.terminal_weight);
  s.read("gamma", p.gamma);
  s.read("rbf_count", p.rbf_count);
  s.read("rbf_width", p.rbf_width);
  s.read("rbf_start", p.rbf_start);
  s.read("rbf_decay", p.rbf_decay);
  s.read("phi0", p.phi0);
  s.read("supervised", p.supervised);
  s.read("truth_scale", p.truth_scale);
}

int control_dim_of(const std::string& environment) { return environment == "planar_gate" ? 2 : 1; }

int theta_dim_of(const ExperimentConfig& c) {
  return c.environment == "planar_gate" ? c.planar.rbf_count : 2;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string format_double(double v) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), v);
  return std::string(buffer, result.ptr);
}

bool succeeded(OutcomeKind kind) {
  return kind == OutcomeKind::Converged || kind == OutcomeKind::SatisfiedByHuman;
}

nlohmann::json polytope_json(const Polytope& poly) {
  nlohmann::json normals = nlohmann::json::array();
  for (int i = 0; i < poly.rows(); ++i) normals.push_back(vec_json(poly.normals().row(i).transpose()));
  return {{"normals", normals}, {"offsets", vec_json(poly.offsets())}};
}

}  // namespace

KeyMap default_key_map(int control_dim) {
  KeyMap keys;
  if (control_dim == 1) {
    keys["up"] = Eigen::VectorXd::Constant(1, 1.0);
    keys["down"] = Eigen::VectorXd::Constant(1, -1.0);
  } else if (control_dim == 2) {
    keys["up"] = Eigen::Vector2d(0.0, 1.0);
    keys["down"] = Eigen::Vector2d(0.0, -1.0);
    keys["left"] = Eigen::Vector2d(-1.0, 0.0);
    keys["right"] = Eigen::Vector2d(1.0, 0.0);
  } else {
    fail(ErrorKind::InvalidArgument, "no default key map for control dimension " + std::to_string(control_dim));
  }
  return keys;
}

ExperimentConfig parse_experiment_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::ConfigError, std::string("YAML syntax: ") + e.what());
  }
  if (!root.IsMap()) fail(ErrorKind::ConfigError, "top level must be a mapping");

  ExperimentConfig c;
  std::vector<std::string> diag;
  {
    Section top(root, "", diag);
    top.read("name", c.name);
    std::string output_dir = c.output_dir.string();
    top.read("output_dir", output_dir);
    c.output_dir = output_dir;

    if (!top.has("environment")) {
      diag.push_back("environment: required");
    } else {
      Section env(top.raw("environment"), "environment", diag);
      env.read("id", c.environment);
      if (c.environment != "pendulum" && c.environment != "planar_gate") {
        diag.push_back("environment.id: unknown environment '" + c.environment + "'");
      }
      if (env.has("params")) {
        Section params(env.raw("params"), "environment.params", diag);
        if (c.environment == "planar_gate") {
          read_planar(params, c.planar);
        } else {
          read_pendulum(params, c.pendulum);
        }
      }
      const int m = control_dim_of(c.environment);
      c.keys = default_key_map(m);
      if (env.has("keys")) {
        const YAML::Node keys = env.raw("keys");
        if (!keys.IsMap()) {
          diag.push_back("environment.keys: expected a mapping");
        } else {
          c.keys.clear();
          Section k(keys, "environment.keys", diag);
          for (const auto& entry : keys) {
            const auto id = entry.first.as<std::string>("");
            Eigen::VectorXd v;
            k.read_vector(id, v, m);
            if (v.size() == m) c.keys[id] = v;
          }
        }
      }
    }

    if (!top.has("alignment")) {
      diag.push_back("alignment: required");
    } else {
      Section a(top.raw("alignment"), "alignment", diag);
      a.read_vector("c_low", c.alignment.c_low);
      a.read_vector("c_high", c.alignment.c_high);
      a.read("rho_H", c.alignment.rho_H);
      a.read("epsilon_misspec", c.alignment.epsilon_misspec);
      a.read("max_env_steps", c.alignment.max_env_steps);
      a.read("max_emergency_resets", c.alignment.max_emergency_resets);
      if (a.has("solver")) {
        Section s(a.raw("solver"), "alignment.solver", diag);
        read_solver(s, c.alignment.solver);
      }
      if (a.has("mve")) {
        Section s(a.raw("mve"), "alignment.mve", diag);
        s.read("barrier_tolerance", c.alignment.mve.barrier_tolerance);
        s.read("max_newton_steps", c.alignment.mve.max_newton_steps);
      }
    }

    const YAML::Node oracle = top.raw("oracle");
    if (!oracle || oracle.IsNull()) {
      diag.push_back("oracle: required (a mapping, or 'interactive')");
    } else if (oracle.IsScalar()) {
      if (oracle.Scalar() != "interactive") diag.push_back("oracle: expected a mapping or 'interactive'");
    } else {
      Section o(oracle, "oracle", diag);
      OracleConfig oc;
      o.read("intent_radius", oc.intent_radius);
      o.read("epsilon_g", oc.epsilon_g);
      o.read("p_correct", oc.p_correct);
      o.read("seed_offset", c.oracle_seed_offset);
      if (o.has("gate_check")) {
        Section g(o.raw("gate_check"), "oracle.gate_check", diag);
        g.read("wall_margin", c.gate_check.wall_margin);
        g.read("corridor_margin", c.gate_check.corridor_margin);
        g.read("spacing", c.gate_check.spacing);
      }
      c.oracle = oc;
    }

    if (top.has("seeds")) {
      const YAML::Node seeds = top.raw("seeds");
      if (seeds.IsSequence()) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          try {
            c.seeds.push_back(seeds[i].as<std::uint64_t>());
          } catch (const YAML::Exception&) {
            diag.push_back("seeds[" + std::to_string(i) + "]: expected a non-negative integer");
          }
        }
      } else if (seeds.IsMap()) {
        Section s(seeds, "seeds", diag);
        std::uint64_t first = 0;
        int count = 0;
        s.read("first", first);
        s.read("count", count);
        if (count < 0) diag.push_back("seeds.count: must be >= 0");
        for (int i = 0; i < count; ++i) c.seeds.push_back(first + static_cast<std::uint64_t>(i));
      } else {
        diag.push_back("seeds: expected a list or {first, count}");
      }
    }
  }

  if (diag.empty()) {
    const int r = theta_dim_of(c);
    if (c.alignment.c_low.size() != r || c.alignment.c_high.size() != r) {
      diag.push_back("alignment: c_low and c_high need " + std::to_string(r) + " entries for " + c.environment);
    }
    const auto check = [&](const std::string& where, auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        diag.push_back(where + ": " + e.what());
      }
    };
    if (diag.empty()) check("alignment", [&] { c.alignment.validate(); });
    check("alignment.mve", [&] {
      if (!(c.alignment.mve.barrier_tolerance > 0) || c.alignment.mve.max_newton_steps < 1) {
        fail(ErrorKind::InvalidArgument, "barrier_tolerance must be positive and max_newton_steps >= 1");
      }
    });
    if (c.oracle) check("oracle", [&] { c.oracle->validate(); });
    check("environment.params", [&] { make_environment(c); });
    if (c.oracle && diag.empty()) {
      check("oracle", [&] {
        if (!make_environment(c)->has_truth()) {
          fail(ErrorKind::NotSupervised, "a simulated oracle needs a supervised environment");
        }
      });
    }
    if (c.environment == "planar_gate" && !(c.gate_check.spacing > 0)) {
      diag.push_back("oracle.gate_check.spacing: must be positive");
    }
  }

  if (!diag.empty()) {
    std::string message = "invalid experiment config";
    for (const auto& d : diag) message += "\n  " + d;
    fail(ErrorKind::ConfigError, message);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json params;
  if (c.environment == "planar_gate") {
    const auto& p = c.planar;
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : p.targets) targets.push_back({t.x(), t.y()});
    params = {{"dt", p.dt},
              {"horizon", p.horizon},
              {"workspace", p.workspace},
              {"gate",
               {{"gate_x", p.gate.gate_x},
                {"gate_y", p.gate.gate_y},
                {"opening_half_width", p.gate.opening_half_width},
                {"wall_half_thickness", p.gate.wall_half_thickness}}},
              {"start_x", p.start_x},
              {"start_y_low", p.start_y_low},
              {"start_y_high", p.start_y_high},
              {"targets", targets},
              {"target_radius", p.target_radius},
              {"position_weight", p.position_weight},
              {"velocity_weight", p.velocity_weight},
              {"control_weight", p.control_weight},
              {"terminal_weight", p.terminal_weight},
              {"gamma", p.gamma},
              {"rbf_count", p.rbf_count},
              {"rbf_width", p.rbf_width},
              {"rbf_start", p.rbf_start},
              {"rbf_decay", p.rbf_decay},
              {"phi0", p.phi0},
              {"supervised", p.supervised},
              {"truth_scale", p.truth_scale}};
  } else {
    const auto& p = c.pendulum;
    params = {{"mass", p.physics.mass},
              {"length", p.physics.length},
              {"damping", p.physics.damping},
              {"gravity", p.physics.gravity},
              {"dt", p.physics.dt},
              {"horizon", p.horizon},
              {"target", vec_json(p.target)},
              {"control_weight", p.control_weight},
              {"terminal_weight", vec_json(p.terminal_weight)},
              {"bound", p.bound},
              {"gamma", p.gamma},
              {"noise_variance", vec_json(p.noise_variance)},
              {"noise", p.noise},
              {"reset_low", vec_json(p.reset_low)},
              {"reset_high", vec_json(p.reset_high)},
              {"reset_margin", p.reset_margin},
              {"target_radius", p.target_radius},
              {"truth_theta", p.truth_theta ? vec_json(*p.truth_theta) : nlohmann::json(nullptr)}};
  }
  nlohmann::json keys = nlohmann::json::object();
  for (const auto& [id, v] : c.keys) keys[id] = vec_json(v);

  const auto& a = c.alignment;
  nlohmann::json j = {
      {"name", c.name},
      {"environment", {{"id", c.environment}, {"params", params}, {"keys", keys}}},
      {"alignment",
       {{"c_low", vec_json(a.c_low)},
        {"c_high", vec_json(a.c_high)},
        {"rho_H", a.rho_H},
        {"epsilon_misspec", a.epsilon_misspec},
        {"max_env_steps", a.max_env_steps},
        {"max_emergency_resets", a.max_emergency_resets},
        {"solver",
         {{"max_iterations", a.solver.max_iterations},
          {"gradient_tolerance", a.solver.gradient_tolerance},
          {"line_search_shrink", a.solver.line_search_shrink},
          {"initial_step", a.solver.initial_step},
          {"memory", a.solver.memory},
          {"newton_polish_steps", a.solver.newton_polish_steps},
          {"polish_threshold", a.solver.polish_threshold}}},
        {"mve",
         {{"barrier_tolerance", a.mve.barrier_tolerance},
          {"max_newton_steps", a.mve.max_newton_steps}}}}},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir.string()}};
  if (c.oracle) {
    nlohmann::json o = {{"intent_radius", c.oracle->intent_radius},
                        {"epsilon_g", c.oracle->epsilon_g},
                        {"p_correct", c.oracle->p_correct},
                        {"seed_offset", c.oracle_seed_offset}};
    if (c.environment == "planar_gate") {
      o["gate_check"] = {{"wall_margin", c.gate_check.wall_margin},
                         {"corridor_margin", c.gate_check.corridor_margin},
                         {"spacing", c.gate_check.spacing}};
    }
    j["oracle"] = o;
  } else {
    j["oracle"] = "interactive";
  }
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& json) {
  // JSON text is valid YAML, so the same validation applies to replayed configs.
  return parse_experiment_config(json.dump());
}

std::unique_ptr<Environment> make_environment(const ExperimentConfig& config) {
  if (config.environment == "planar_gate") return std::make_unique<PlanarGateEnv>(config.planar);
  if (config.environment == "pendulum") return std::make_unique<PendulumEnv>(config.pendulum);
  fail(ErrorKind::ConfigError, "unknown environment '" + config.environment + "'");
}

Eigen::VectorXd truth_theta(const ExperimentConfig& config) {
  if (config.environment == "planar_gate") {
    if (!config.planar.supervised) return {};
    return PlanarGateEnv(config.planar).truth_theta();
  }
  if (!config.pendulum.truth_theta) return {};
  return *config.pendulum.truth_theta;
}

void disable_noise(ExperimentConfig& config) { config.pendulum.noise = false; }

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed, const AlignmentObserver& observer) {
  if (config.interactive()) fail(ErrorKind::ConfigError, "interactive configs cannot be run in batch");
  auto env = make_environment(config);

  AlignmentConfig alignment = config.alignment;
  alignment.rng_seed = seed;
  OracleConfig oracle = *config.oracle;
  oracle.theta_H = truth_theta(config);
  oracle.rng_seed = seed + config.oracle_seed_offset;

  OracleCorrector::Predicate converged;
  if (const auto* planar = dynamic_cast<const PlanarGateEnv*>(env.get())) {
    converged = [planar, check = config.gate_check](const Eigen::VectorXd& theta) {
      return planar->check_gate(theta, check).holds();
    };
  }
  OracleCorrector source(oracle, env->truth_problem(), converged);

  const int r = env->theta_dim();
  std::vector<std::optional<double>> areas;
  AlignmentObserver chained = observer;
  chained.on_cut = [&](const CutInfo& info) {
    areas.push_back(r == 2 ? std::optional<double>(polygon_area_2d(info.after.polytope)) : std::nullopt);
    if (observer.on_cut) observer.on_cut(info);
  };

  const AlignmentState initial = initial_state(alignment);
  SeedRun run;
  run.seed = seed;
  run.result = run_alignment(*env, source, alignment, chained);

  const auto& trace = run.result.state.trace;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    MetricsRow row;
    row.seed = seed;
    row.iteration = trace[i].iteration;
    row.log_det_H = trace[i].log_det_H;
    row.theta = trace[i].theta;
    row.distance_to_truth = trace[i].distance_to_truth;
    row.area_2d = i < areas.size() ? areas[i] : std::nullopt;
    row.wall_time_ms = trace[i].wall_time_ms;
    run.metrics.push_back(std::move(row));
  }
  if (oracle.theta_H.size() == r) run.final_distance = (run.result.outcome.final_theta - oracle.theta_H).norm();

  std::optional<Eigen::VectorXd> truth;
  if (oracle.theta_H.size() == r) truth = oracle.theta_H;
  run.trace = trace_records(config, seed, initial, run.result, truth);
  return run;
}

std::vector<nlohmann::json> trace_records(const ExperimentConfig& config, std::uint64_t seed,
                                          const AlignmentState& initial,
                                          const AlignmentResult& result,
                                          const std::optional<Eigen::VectorXd>& truth) {
  std::vector<nlohmann::json> lines;
  const int r = static_cast<int>(initial.theta.size());
  // Where the files went is not a parameter of the run, and leaving it out
  // keeps traces comparable across output directories.
  nlohmann::json echoed = config_to_json(config);
  echoed.erase("output_dir");
  lines.push_back({{"type", "header"},
                   {"v", kTraceVersion},
                   {"seed", seed},
                   {"config", echoed},
                   {"k_budget", initial.budget},
                   {"tau_r", unit_ball_volume(r)},
                   {"theta", vec_json(initial.theta)},
                   {"logdet", initial.ellipsoid.log_det()}});
  for (const auto& record : result.state.trace) {
    lines.push_back({{"type", "correction"},
                     {"v", kTraceVersion},
                     {"iter", record.iteration},
                     {"env_step", record.env_step},
                     {"dir", vec_json(record.correction)},
                     {"theta", vec_json(record.theta)},
                     {"logdet", record.log_det_H},
                     {"distance_to_truth", optional_json(record.distance_to_truth)},
                     {"cut",
                      {{"primary_normal", vec_json(record.cut.primary_normal)},
                       {"primary_offset", record.cut.primary_offset},
                       {"feasibility_normal", vec_json(record.cut.feasibility_normal)},
                       {"feasibility_offset", record.cut.feasibility_offset}}}});
  }
  const auto& outcome = result.outcome;
  std::optional<double> distance;
  if (truth) distance = (outcome.final_theta - *truth).norm();
  lines.push_back({{"type", "outcome"},
                   {"v", kTraceVersion},
                   {"kind", std::string(to_string(outcome.kind))},
                   {"corrections_used", outcome.corrections_used},
                   {"env_steps", outcome.env_steps},
                   {"final_theta", vec_json(outcome.final_theta)},
                   {"distance_to_truth", optional_json(distance)},
                   {"logdet", result.state.ellipsoid.log_det()},
                   {"polytope", polytope_json(result.state.polytope)}});
  return lines;
}

std::string metrics_csv_header(int theta_dim) {
  std::string header = "seed,iteration,log_det_H";
  for (int i = 0; i < theta_dim; ++i) header += ",theta_" + std::to_string(i);
  header += ",distance_to_truth,area_2d,wall_time_ms";
  return header;
}

std::string metrics_csv_row(const MetricsRow& row) {
  std::string line = std::to_string(row.seed) + "," + std::to_string(row.iteration) + "," +
                     format_double(row.log_det_H);
  for (Eigen::Index i = 0; i < row.theta.size(); ++i) line += "," + format_double(row.theta[i]);
  line += "," + (row.distance_to_truth ? format_double(*row.distance_to_truth) : std::string());
  line += "," + (row.area_2d ? format_double(*row.area_2d) : std::string());
  line += "," + format_double(row.wall_time_ms);
  return line;
}

nlohmann::json summarize_runs(const ExperimentConfig& config, const std::vector<SeedRun>& runs) {
  const auto& a = config.alignment;
  const int budget = max_corrections((a.c_high - a.c_low).prod(), a.rho_H, static_cast<int>(a.c_low.size()));
  nlohmann::json seeds = nlohmann::json::array();
  bool all = true;
  int converged = 0;
  std::optional<int> lo, hi;
  for (const auto& run : runs) {
    const auto& o = run.result.outcome;
    const bool ok = succeeded(o.kind);
    all = all && ok;
    if (o.kind == OutcomeKind::Converged) ++converged;
    lo = std::min(lo.value_or(o.corrections_used), o.corrections_used);
    hi = std::max(hi.value_or(o.corrections_used), o.corrections_used);
    seeds.push_back({{"seed", run.seed},
                     {"outcome", std::string(to_string(o.kind))},
                     {"success", ok},
                     {"corrections_used", o.corrections_used},
                     {"env_steps", o.env_steps},
                     {"final_theta", vec_json(o.final_theta)},
                     {"distance_to_truth", optional_json(run.final_distance)}});
  }
  nlohmann::json corrections = nullptr;
  if (lo) corrections = {{"min", *lo}, {"max", *hi}};
  return {{"v", kTraceVersion},
          {"name", config.name},
          {"config", config_to_json(config)},
          {"k_budget", budget},
          {"success", all},
          {"converged", converged},
          {"corrections", corrections},
          {"runs", seeds}};
}

ExperimentArtifacts run_experiment(const ExperimentConfig& config, unsigned jobs) {
  if (config.interactive()) fail(ErrorKind::ConfigError, "interactive configs are served, not run in batch");
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());

  std::vector<SeedRun> runs(config.seeds.size());
  std::vector<std::exception_ptr> errors(config.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.seeds.size(); i = next++) {
      try {
        runs[i] = run_seed(config, config.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(jobs, std::max<std::size_t>(1, config.seeds.size()));
  for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentArtifacts out;
  std::filesystem::create_directories(config.output_dir);
  for (const auto& run : runs) {
    auto path = config.output_dir / ("trace_" + std::to_string(run.seed) + ".jsonl");
    std::ofstream trace(path);
    for (const auto& line : run.trace) trace << line.dump() << '\n';
    if (!trace) fail(ErrorKind::InvalidArgument, "cannot write " + path.string());
    out.traces.push_back(std::move(path));
  }

  out.metrics_csv = config.output_dir / "metrics.csv";
  std::ofstream csv(out.metrics_csv);
  csv << metrics_csv_header(static_cast<int>(config.alignment.c_low.size())) << '\n';
  for (const auto& run : runs) {
    for (const auto& row : run.metrics) csv << metrics_csv_row(row) << '\n';
  }
  if (!csv) fail(ErrorKind::InvalidArgument, "cannot write " + out.metrics_csv.string());

  out.summary_json = config.output_dir / "summary.json";
  std::ofstream summary(out.summary_json);
  summary << summarize_runs(config, runs).dump(2) << '\n';
  if (!summary) fail(ErrorKind::InvalidArgument, "cannot write " + out.summary_json.string());

  out.runs = std::move(runs);
  return out;
}

std::string strip_wall_time(const std::string& metrics_csv) {
  std::istringstream in(metrics_csv);
  std::string out, line;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out += (cut == std::string::npos ? line : line.substr(0, cut));
    out += '\n';
  }
  return out;
}

nlohmann::json summarize_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::InvalidArgument, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("trace_", 0) == 0 && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  nlohmann::json runs = nlohmann::json::array();
  std::map<std::string, int> outcomes;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    nlohmann::json header, outcome;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (j.at("type") == "header") header = j;
      if (j.at("type") == "outcome") outcome = j;
    }
    if (header.is_null() || outcome.is_null()) {
      fail(ErrorKind::InvalidArgument, file.string() + " is not a complete trace");
    }
    ++outcomes[outcome.at("kind").get<std::string>()];
    runs.push_back({{"seed", header.at("seed")},
                    {"k_budget", header.at("k_budget")},
                    {"outcome", outcome.at("kind")},
                    {"corrections_used", outcome.at("corrections_used")},
                    {"env_steps", outcome.at("env_steps")},
                    {"distance_to_truth", outcome.at("distance_to_truth")}});
  }
  return {{"directory", dir.string()}, {"runs", runs}, {"outcomes", outcomes}};
}

// ---------------------------------------------------------------------------
// Grids

GridSlice parse_slice(const std::string& text, int state_dim) {
  GridSlice slice;
  slice.fixed = Eigen::VectorXd::Zero(state_dim);
  std::set<int> used;
  std::stringstream tokens(text);
  std::string token;
  while (std::getline(tokens, token, ',')) {
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string::npos || token.size() < 2 || token[0] != 'x') {
      fail(ErrorKind::InvalidArgument, "slice entry '" + token + "' is not of the form x<i>=<value>");
    }
    int index = -1;
    const auto name = token.substr(1, eq - 1);
    auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), index);
    if (ec != std::errc() || ptr != name.data() + name.size() || index < 0 || index >= state_dim) {
      fail(ErrorKind::DimensionError, "slice coordinate '" + name + "' outside the state");
    }
    if (!used.insert(index).second) fail(ErrorKind::InvalidArgument, "coordinate x" + name + " given twice");

    std::vector<std::string> parts;
    std::stringstream spec(token.substr(eq + 1));
    std::string part;
    while (std::getline(spec, part, ':')) parts.push_back(part);
    try {
      if (parts.size() == 1) {
        slice.fixed[index] = std::stod(parts[0]);
      } else if (parts.size() == 2 || parts.size() == 3) {
        AxisRange range{index, std::stod(parts[0]), std::stod(parts[1]), 41};
        if (parts.size() == 3) range.samples = std::stoi(parts[2]);
        slice.ranges.push_back(range);
      } else {
        fail(ErrorKind::InvalidArgument, "slice entry '" + token + "' has too many fields");
      }
    } catch (const std::logic_error&) {
      fail(ErrorKind::InvalidArgument, "slice entry '" + token + "' is not numeric");
    }
  }
  return slice;
}

std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> zero_contour(const Eigen::VectorXd& xs,
                                                                      const Eigen::VectorXd& ys,
                                                                      const Eigen::MatrixXd& values) {
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> segments;
  const auto crossing = [](const Eigen::Vector2d& pa, double va, const Eigen::Vector2d& pb, double vb) {
    const double t = va / (va - vb);
    return Eigen::Vector2d(pa + t * (pb - pa));
  };
  for (Eigen::Index j = 0; j + 1 < ys.size(); ++j) {
    for (Eigen::Index i = 0; i + 1 < xs.size(); ++i) {
      // Corners counter-clockwise from the lower left.
      const Eigen::Vector2d p[4] = {{xs[i], ys[j]}, {xs[i + 1], ys[j]}, {xs[i + 1], ys[j + 1]}, {xs[i], ys[j + 1]}};
      const double v[4] = {values(j, i), values(j, i + 1), values(j + 1, i + 1), values(j + 1, i)};
      bool above[4];
      for (int k = 0; k < 4; ++k) above[k] = v[k] > 0.0;

      // Edge k joins corner k and corner k+1.
      std::optional<Eigen::Vector2d> edge[4];
      int count = 0;
      for (int k = 0; k < 4; ++k) {
        const int l = (k + 1) % 4;
        if (above[k] != above[l]) {
          edge[k] = crossing(p[k], v[k], p[l], v[l]);
          ++count;
        }
      }
      if (count == 2) {
        int a = -1, b = -1;
        for (int k = 0; k < 4; ++k) {
          if (edge[k]) (a < 0 ? a : b) = k;
        }
        segments.emplace_back(*edge[a], *edge[b]);
      } else if (count == 4) {
        // Saddle: the centre value decides which diagonal pair stays connected.
        const bool centre_above = (v[0] + v[1] + v[2] + v[3]) > 0.0;
        if (centre_above == above[0]) {
          segments.emplace_back(*edge[0], *edge[1]);
          segments.emplace_back(*edge[2], *edge[3]);
        } else {
          segments.emplace_back(*edge[3], *edge[0]);
          segments.emplace_back(*edge[1], *edge[2]);
        }
      }
    }
  }
  return segments;
}

ConstraintGrid export_constraint_grid(const Eigen::VectorXd& theta, const FeatureConstraint& constraint,
                                      int horizon, int control_dim, const GridSlice& slice) {
  if (slice.ranges.size() != 2) {
    fail(ErrorKind::UnsupportedSlice,
         "a grid needs exactly two ranged axes, got " + std::to_string(slice.ranges.size()));
  }
  for (const auto& r : slice.ranges) {
    if (!(r.min < r.max)) fail(ErrorKind::UnsupportedSlice, "axis x" + std::to_string(r.index) + " range is empty or reversed");
    if (r.samples < 2) fail(ErrorKind::UnsupportedSlice, "each axis needs at least two samples");
    if (r.index < 0 || r.index >= slice.fixed.size()) fail(ErrorKind::DimensionError, "axis outside the state");
  }
  if (slice.ranges[0].index == slice.ranges[1].index) fail(ErrorKind::UnsupportedSlice, "both axes are the same coordinate");

  ConstraintGrid grid;
  grid.x = slice.ranges[0];
  grid.y = slice.ranges[1];
  const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(grid.x.samples, grid.x.min, grid.x.max);
  const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(grid.y.samples, grid.y.min, grid.y.max);
  grid.values.resize(grid.y.samples, grid.x.samples);
  Eigen::VectorXd state = slice.fixed;
  for (int j = 0; j < grid.y.samples; ++j) {
    for (int i = 0; i < grid.x.samples; ++i) {
      state[grid.x.index] = xs[i];
      state[grid.y.index] = ys[j];
      grid.values(j, i) = evaluate_g(constraint, theta, stationary_trajectory(state, control_dim, horizon));
    }
  }

  grid.zero_mask.setConstant(grid.y.samples, grid.x.samples, false);
  for (int j = 0; j < grid.y.samples; ++j) {
    for (int i = 0; i < grid.x.samples; ++i) {
      const double v = grid.values(j, i);
      bool touches = v == 0.0;
      if (i + 1 < grid.x.samples) touches = touches || (v > 0.0) != (grid.values(j, i + 1) > 0.0);
      if (j + 1 < grid.y.samples) touches = touches || (v > 0.0) != (grid.values(j + 1, i) > 0.0);
      grid.zero_mask(j, i) = touches;
    }
  }
  grid.contour = zero_contour(xs, ys, grid.values);
  return grid;
}

nlohmann::json grid_to_json(const ConstraintGrid& grid) {
  const auto axis = [](const AxisRange& r) {
    return nlohmann::json{{"index", r.index}, {"min", r.min}, {"max", r.max}, {"samples", r.samples}};
  };
  nlohmann::json values = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (Eigen::Index j = 0; j < grid.values.rows(); ++j) {
    values.push_back(vec_json(grid.values.row(j).transpose()));
    std::vector<int> row;
    for (Eigen::Index i = 0; i < grid.values.cols(); ++i) row.push_back(grid.zero_mask(j, i) ? 1 : 0);
    mask.push_back(row);
  }
  nlohmann::json contour = nlohmann::json::array();
  for (const auto& [a, b] : grid.contour) contour.push_back({{a.x(), a.y()}, {b.x(), b.y()}});
  return {{"x", axis(grid.x)}, {"y", axis(grid.y)}, {"g", values}, {"zero_mask", mask}, {"contour", contour}};
}

}  // namespace safe_align
