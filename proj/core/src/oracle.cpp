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

#include "safe_align/oracle.hpp"

#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

void OracleConfig::validate() const {
  if (!(p_correct > 0.0 && p_correct <= 1.0)) fail(ErrorKind::InvalidArgument, "p_correct must be in (0, 1]");
  if (!(epsilon_g > 0.0)) fail(ErrorKind::InvalidArgument, "epsilon_g must be positive");
  if (!(intent_radius > 0.0)) fail(ErrorKind::InvalidArgument, "intent_radius must be positive");
}

std::optional<CorrectionEvent> maybe_correct(const OracleConfig& config,
                                             const BarrierProblem& truth, const Trajectory& plan,
                                             int step_index, std::mt19937_64& rng) {
  const double g = evaluate_g(*truth.constraint, truth.theta, plan);
  if (!(g < 0.0) || g <= -config.epsilon_g) return std::nullopt;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= config.p_correct) return std::nullopt;

  const int m = plan.control_dim();
  const Eigen::VectorXd first = -barrier_gradient(truth, plan).head(m);
  Eigen::VectorXd direction = first.unaryExpr([](double v) {
    return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  });
  if (!(direction.array() != 0.0).any()) return std::nullopt;
  return CorrectionEvent{std::move(direction), step_index};
}

bool is_converged(const OracleConfig& config, const Eigen::VectorXd& theta) {
  if (theta.size() != config.theta_H.size()) {
    fail(ErrorKind::DimensionError, "theta dimension " + std::to_string(theta.size()) +
                                        " vs theta_H " + std::to_string(config.theta_H.size()));
  }
  return (theta - config.theta_H).norm() <= config.intent_radius;
}

OracleCorrector::OracleCorrector(OracleConfig config, BarrierProblem truth, Predicate converged)
    : config_(std::move(config)),
      truth_(std::move(truth)),
      converged_(std::move(converged)),
      rng_(config_.rng_seed) {
  config_.validate();
  truth_.validate();
}

HumanInput OracleCorrector::poll(const CorrectionContext& context) {
  auto event = maybe_correct(config_, truth_, context.plan, context.env_step, rng_);
  if (!event) return {};
  events_.push_back(*event);
  return {InputKind::Correction, event->direction};
}

bool OracleCorrector::declares_converged(const Eigen::VectorXd& theta) const {
  if (converged_) return converged_(theta);
  return is_converged(config_, theta);
}

std::optional<Eigen::VectorXd> OracleCorrector::reference_theta() const {
  if (config_.theta_H.size() == 0) return std::nullopt;
  return config_.theta_H;
}

}  // namespace safe_align
