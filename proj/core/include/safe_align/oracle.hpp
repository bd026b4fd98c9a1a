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
#include <functional>
#include <optional>
#include <random>

#include "safe_align/alignment.hpp"
#include "safe_align/trajopt.hpp"

namespace safe_align {

struct OracleConfig {
  /// Ground-truth weights; empty when the truth constraint has no weights.
  Eigen::VectorXd theta_H;
  /// Radius of the intent ball around theta_H.
  double intent_radius = 0.02;
  /// Corrections are only given when g_truth(plan) > -epsilon_g.
  double epsilon_g = 0.25;
  double p_correct = 0.3;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct CorrectionEvent {
  Eigen::VectorXd direction;
  int step_index = 0;
};

/// Simulated correction for one plan. `truth` is the barrier problem under the
/// ground-truth constraint. When the plan is within epsilon_g of the truth
/// boundary (and still strictly inside), with probability p_correct returns
/// the sign of the first control block of -grad B(plan; truth).
std::optional<CorrectionEvent> maybe_correct(const OracleConfig& config,
                                             const BarrierProblem& truth, const Trajectory& plan,
                                             int step_index, std::mt19937_64& rng);

/// |theta - theta_H| <= intent_radius (closed ball).
bool is_converged(const OracleConfig& config, const Eigen::VectorXd& theta);

/// Correction source backed by maybe_correct.
class OracleCorrector final : public CorrectionSource {
 public:
  using Predicate = std::function<bool(const Eigen::VectorXd&)>;

  /// With no predicate, convergence means is_converged(config, theta).
  OracleCorrector(OracleConfig config, BarrierProblem truth, Predicate converged = {});

  HumanInput poll(const CorrectionContext& context) override;
  bool declares_converged(const Eigen::VectorXd& theta) const override;
  std::optional<Eigen::VectorXd> reference_theta() const override;

  /// Every event emitted so far.
  const std::vector<CorrectionEvent>& events() const { return events_; }

 private:
  OracleConfig config_;
  BarrierProblem truth_;
  Predicate converged_;
  std::mt19937_64 rng_;
  std::vector<CorrectionEvent> events_;
};

}  // namespace safe_align
