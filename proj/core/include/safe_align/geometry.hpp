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
#include <vector>

#include "safe_align/constraints.hpp"
#include "safe_align/trajopt.hpp"

namespace safe_align {

/// {theta : normals * theta <= offsets}, one row per half-space.
class Polytope {
 public:
  Polytope() = default;
  Polytope(Eigen::MatrixXd normals, Eigen::VectorXd offsets);

  int dim() const { return static_cast<int>(normals_.cols()); }
  int rows() const { return static_cast<int>(normals_.rows()); }
  const Eigen::MatrixXd& normals() const { return normals_; }
  const Eigen::VectorXd& offsets() const { return offsets_; }

  /// True iff every row holds with the given slack.
  bool contains(const Eigen::VectorXd& theta, double slack = 0.0) const;

  /// Returns a copy with one more half-space.
  Polytope with_row(const Eigen::VectorXd& normal, double offset) const;

 private:
  Eigen::MatrixXd normals_;
  Eigen::VectorXd offsets_;
};

/// The two half-spaces implied by one correction:
///   {theta : h^T theta <= b}  and  {theta : phi^T theta < -phi0}.
struct Cut {
  Eigen::VectorXd primary_normal;
  double primary_offset = 0.0;
  Eigen::VectorXd feasibility_normal;
  double feasibility_offset = 0.0;
};

/// {shape * v + center : |v| <= 1}, shape symmetric positive definite.
struct Ellipsoid {
  Eigen::MatrixXd shape;
  Eigen::VectorXd center;

  double log_det() const;
};

/// Box c_l <= theta <= c_h as 2r half-spaces. Throws EmptyBox unless
/// c_l < c_h componentwise.
Polytope initial_box(const Eigen::VectorXd& c_low, const Eigen::VectorXd& c_high);

/// Cut from a solved plan and a directional correction applied at the first
/// step of the plan. Throws DegenerateCorrection for a zero correction.
Cut build_cut(const DynamicsModel& dynamics, const CostSpec& cost,
              const FeatureConstraint& constraint, double gamma, const Trajectory& plan,
              const Eigen::VectorXd& correction);

/// Appends both half-spaces of the cut, each rescaled to a unit normal.
/// A half-space with a vanishing normal is dropped when it holds everywhere
/// and reported as EmptyHypothesis when it holds nowhere.
Polytope apply_cut(const Polytope& poly, const Cut& cut);

struct MveOptions {
  /// Stop once the barrier weight falls below this (the duality-gap bound is
  /// rows * weight).
  double barrier_tolerance = 1e-12;
  int max_newton_steps = 400;
};

/// Maximum-volume inscribed ellipsoid. Throws InfeasiblePolytope when the
/// polytope has no interior and UnboundedPolytope when it is not bounded.
Ellipsoid mve(const Polytope& poly, const MveOptions& options = {});

/// max_j (|shape * h_j| + center^T h_j - b_j); <= 0 means the ellipsoid is
/// inside the polytope.
double containment_residual(const Ellipsoid& ellipsoid, const Polytope& poly);

/// Counter-clockwise vertices of a bounded 2D polytope (empty if the
/// polytope is empty). Throws UnboundedPolytope / DimensionError.
std::vector<Eigen::Vector2d> polygon_vertices_2d(const Polytope& poly);

/// Exact area by vertex enumeration and the shoelace formula; 0 when empty.
double polygon_area_2d(const Polytope& poly);

}  // namespace safe_align
