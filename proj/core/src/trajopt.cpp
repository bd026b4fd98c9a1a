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

#include "safe_align/trajopt.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

#include "safe_align/errors.hpp"

namespace safe_align {

double CostSpec::total(const Trajectory& traj) const {
  double j = 0.0;
  for (int t = 0; t < traj.horizon(); ++t) {
    j += stage(traj.states.col(t), traj.controls.col(t), t);
  }
  return j + terminal(traj.states.col(traj.horizon()));
}

TrajectoryPartials CostSpec::partials(const Trajectory& traj) const {
  auto p = TrajectoryPartials::zeros(traj.state_dim(), traj.control_dim(), traj.horizon());
  for (int t = 0; t < traj.horizon(); ++t) {
    stage_gradient(traj.states.col(t), traj.controls.col(t), t, p.dx.col(t), p.du.col(t));
  }
  p.dx.col(traj.horizon()) = terminal_gradient(traj.states.col(traj.horizon()));
  return p;
}

QuadraticCost::QuadraticCost(int horizon, Eigen::VectorXd reference,
                             Eigen::MatrixXd state_weight, Eigen::MatrixXd control_weight,
                             Eigen::MatrixXd terminal_weight)
    : horizon_(horizon),
      reference_(std::move(reference)),
      Q_(std::move(state_weight)),
      R_(std::move(control_weight)),
      Qf_(std::move(terminal_weight)) {
  const auto n = reference_.size();
  if (horizon_ < 1) fail(ErrorKind::InvalidArgument, "cost horizon must be >= 1");
  if (Q_.rows() != n || Q_.cols() != n || Qf_.rows() != n || Qf_.cols() != n ||
      R_.rows() != R_.cols()) {
    fail(ErrorKind::DimensionError, "quadratic cost weight shapes are inconsistent");
  }
}

double QuadraticCost::stage(const Eigen::VectorXd& x, const Eigen::VectorXd& u, int) const {
  const Eigen::VectorXd e = x - reference_;
  return e.dot(Q_ * e) + u.dot(R_ * u);
}

double QuadraticCost::terminal(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd e = x - reference_;
  return e.dot(Qf_ * e);
}

void QuadraticCost::stage_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& u, int,
                                   Eigen::Ref<Eigen::VectorXd> dx,
                                   Eigen::Ref<Eigen::VectorXd> du) const {
  dx = (Q_ + Q_.transpose()) * (x - reference_);
  du = (R_ + R_.transpose()) * u;
}

Eigen::VectorXd QuadraticCost::terminal_gradient(const Eigen::VectorXd& x) const {
  return (Qf_ + Qf_.transpose()) * (x - reference_);
}

// ---------------------------------------------------------------------------

void BarrierProblem::validate() const {
  if (!dynamics || !cost || !constraint) {
    fail(ErrorKind::InvalidArgument, "barrier problem is missing dynamics, cost or constraint");
  }
  if (!(gamma > 0.0)) fail(ErrorKind::InvalidArgument, "gamma must be positive");
  if (theta.size() != constraint->dim()) {
    fail(ErrorKind::DimensionError, "theta does not match the constraint dimension");
  }
}

BarrierProblem BarrierProblem::with_theta(const Eigen::VectorXd& other) const {
  BarrierProblem p = *this;
  p.theta = other;
  return p;
}

void SolverOptions::validate() const {
  if (max_iterations <= 0 || !(gradient_tolerance > 0.0) || !(initial_step > 0.0) ||
      !(line_search_shrink > 0.0 && line_search_shrink < 1.0) || memory < 0 ||
      newton_polish_steps < 0 || !(polish_threshold >= 0.0)) {
    fail(ErrorKind::InvalidArgument, "solver options out of range");
  }
}

namespace {

struct Evaluation {
  Trajectory traj;
  double g = 0.0;
  double value = 0.0;
};

// Returns false when the rollout diverges or leaves the barrier domain.
bool evaluate(const BarrierProblem& problem, const Eigen::VectorXd& x0,
              const Eigen::VectorXd& u, Evaluation& out) {
  try {
    out.traj = rollout_stacked(*problem.dynamics, x0, u, problem.dynamics->control_dim());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NumericalDivergence) return false;
    throw;
  }
  out.g = evaluate_g(*problem.constraint, problem.theta, out.traj);
  if (!(out.g < 0.0)) return false;
  out.value = problem.cost->total(out.traj) - problem.gamma * std::log(-out.g);
  return std::isfinite(out.value);
}

Eigen::VectorXd gradient_at(const BarrierProblem& problem, const Trajectory& traj, double g) {
  const Linearization lin(*problem.dynamics, traj);
  TrajectoryPartials p = problem.cost->partials(traj);
  TrajectoryPartials pg = problem.constraint->g_partials(traj, problem.theta);
  pg *= problem.gamma / (-g);
  p += pg;
  return lin.control_gradient(p);
}

Eigen::VectorXd two_loop(const Eigen::VectorXd& grad, const std::deque<Eigen::VectorXd>& s,
                         const std::deque<Eigen::VectorXd>& y) {
  const std::size_t k = s.size();
  Eigen::VectorXd q = grad;
  std::vector<double> alpha(k), rho(k);
  for (std::size_t i = k; i-- > 0;) {
    rho[i] = 1.0 / y[i].dot(s[i]);
    alpha[i] = rho[i] * s[i].dot(q);
    q -= alpha[i] * y[i];
  }
  if (k > 0) q *= s.back().dot(y.back()) / y.back().squaredNorm();
  for (std::size_t i = 0; i < k; ++i) {
    const double beta = rho[i] * y[i].dot(q);
    q += (alpha[i] - beta) * s[i];
  }
  return -q;
}

}  // namespace

double barrier_value(const BarrierProblem& problem, const Trajectory& traj) {
  problem.validate();
  const double g = evaluate_g(*problem.constraint, problem.theta, traj);
  if (!(g < 0.0)) {
    fail(ErrorKind::DomainViolation,
         "barrier undefined: g_theta = " + std::to_string(g) + " is not negative");
  }
  return problem.cost->total(traj) - problem.gamma * std::log(-g);
}

Eigen::VectorXd barrier_gradient(const BarrierProblem& problem, const Trajectory& traj) {
  problem.validate();
  const double g = evaluate_g(*problem.constraint, problem.theta, traj);
  if (!(g < 0.0)) {
    fail(ErrorKind::DomainViolation,
         "barrier undefined: g_theta = " + std::to_string(g) + " is not negative");
  }
  return gradient_at(problem, traj, g);
}

SolveResult solve_barrier_mpc(const BarrierProblem& problem, const Eigen::VectorXd& x0,
                              const Eigen::MatrixXd& warm_start, const SolverOptions& options) {
  problem.validate();
  options.validate();
  const int m = problem.dynamics->control_dim();
  if (warm_start.rows() != m || warm_start.cols() != problem.cost->horizon()) {
    fail(ErrorKind::DimensionError, "warm start must be m x T");
  }

  Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(warm_start.data(), warm_start.size());
  Evaluation cur;
  cur.traj = rollout(*problem.dynamics, x0, warm_start);
  cur.g = evaluate_g(*problem.constraint, problem.theta, cur.traj);
  if (!(cur.g < 0.0)) {
    fail(ErrorKind::InfeasibleStart,
         "warm start has g_theta = " + std::to_string(cur.g) + " >= 0");
  }
  cur.value = problem.cost->total(cur.traj) - problem.gamma * std::log(-cur.g);
  if (!std::isfinite(cur.value)) fail(ErrorKind::NumericalDivergence, "warm start barrier is not finite");

  SolveResult result;
  result.accepted_values.push_back(cur.value);
  Eigen::VectorXd grad = gradient_at(problem, cur.traj, cur.g);

  constexpr double kArmijo = 1e-4;
  constexpr int kMaxBacktracks = 80;
  std::deque<Eigen::VectorXd> mem_s, mem_y;
  Evaluation trial;

  // With Newton refinement available, the first-order phase only needs to
  // get close; it resumes at full tolerance if the refinement stalls.
  int it = 0;
  auto first_order = [&](double tolerance) {
    for (; it < options.max_iterations; ++it) {
      if (grad.norm() <= tolerance) break;

      Eigen::VectorXd dir = options.memory > 0 ? two_loop(grad, mem_s, mem_y) : Eigen::VectorXd(-grad);
      double slope = grad.dot(dir);
      if (!(slope < 0.0)) {
        mem_s.clear();
        mem_y.clear();
        dir = -grad;
        slope = -grad.squaredNorm();
      }
      double step = mem_s.empty() ? options.initial_step : 1.0;

      bool accepted = false;
      for (int ls = 0; ls < kMaxBacktracks; ++ls) {
        const Eigen::VectorXd u_trial = u + step * dir;
        if (evaluate(problem, x0, u_trial, trial) &&
            trial.value <= cur.value + kArmijo * step * slope) {
          accepted = true;
          const Eigen::VectorXd g_new = gradient_at(problem, trial.traj, trial.g);
          const Eigen::VectorXd s = u_trial - u;
          const Eigen::VectorXd y = g_new - grad;
          if (options.memory > 0 && s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            if (static_cast<int>(mem_s.size()) > options.memory) {
              mem_s.pop_front();
              mem_y.pop_front();
            }
          }
          u = u_trial;
          grad = g_new;
          std::swap(cur, trial);
          result.accepted_values.push_back(cur.value);
          break;
        }
        step *= options.line_search_shrink;
      }
      if (!accepted) break;  // no representable decrease left along dir
    }
  };
  first_order(options.newton_polish_steps > 0
                  ? std::max(options.gradient_tolerance, options.polish_threshold)
                  : options.gradient_tolerance);
  int newton_iterations = 0;

  // Newton refinement. Near the optimum Armijo cannot resolve further decrease
  // in double precision, but the analytic gradient still can.
  const int nu = static_cast<int>(u.size());
  for (int k = 0; k < options.newton_polish_steps && grad.norm() > options.gradient_tolerance; ++k) {
    Eigen::MatrixXd hess(nu, nu);
    bool ok = true;
    for (int j = 0; j < nu && ok; ++j) {
      const double h = 1e-5 * (1.0 + std::abs(u[j]));
      Eigen::VectorXd up = u, um = u;
      up[j] += h;
      um[j] -= h;
      Evaluation ep, em;
      if (!evaluate(problem, x0, up, ep) || !evaluate(problem, x0, um, em)) {
        ok = false;
        break;
      }
      hess.col(j) = (gradient_at(problem, ep.traj, ep.g) - gradient_at(problem, em.traj, em.g)) / (2 * h);
    }
    if (!ok) break;
    hess = 0.5 * (hess + hess.transpose()).eval();

    double damping = 0.0;
    Eigen::VectorXd delta;
    for (int attempt = 0; attempt < 20; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(hess + damping * Eigen::MatrixXd::Identity(nu, nu));
      if (llt.info() == Eigen::Success) {
        delta = -llt.solve(grad);
        break;
      }
      damping = damping == 0.0 ? 1e-8 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff()) : damping * 10;
    }
    if (delta.size() == 0) break;

    bool accepted = false;
    double step = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      const Eigen::VectorXd u_trial = u + step * delta;
      if (evaluate(problem, x0, u_trial, trial) &&
          trial.value <= cur.value + 1e-14 * std::max(1.0, std::abs(cur.value))) {
        const Eigen::VectorXd g_new = gradient_at(problem, trial.traj, trial.g);
        if (g_new.norm() < grad.norm()) {
          u = u_trial;
          grad = g_new;
          std::swap(cur, trial);
          result.accepted_values.push_back(cur.value);
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    ++newton_iterations;
  }
  if (grad.norm() > options.gradient_tolerance) first_order(options.gradient_tolerance);
  result.iterations = it + newton_iterations;

  result.gradient_norm = grad.norm();
  result.converged = result.gradient_norm <= options.gradient_tolerance;
  result.barrier = cur.value;
  result.trajectory = std::move(cur.traj);
  return result;
}

PolicyStep mpc_policy_step(const BarrierProblem& problem, const Eigen::VectorXd& x_current,
                           const Eigen::MatrixXd& warm_start, const SolverOptions& options) {
  PolicyStep out;
  out.solution = solve_barrier_mpc(problem, x_current, warm_start, options);
  out.control = out.solution.trajectory.controls.col(0);
  return out;
}

Eigen::MatrixXd shift_controls(const Eigen::MatrixXd& controls) {
  const auto T = controls.cols();
  Eigen::MatrixXd shifted(controls.rows(), T);
  if (T == 0) return shifted;
  shifted.leftCols(T - 1) = controls.rightCols(T - 1);
  shifted.col(T - 1) = controls.col(T - 1);
  return shifted;
}

}  // namespace safe_align
