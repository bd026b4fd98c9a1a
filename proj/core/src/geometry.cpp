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

#include "safe_align/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "safe_align/errors.hpp"

namespace safe_align {

Polytope::Polytope(Eigen::MatrixXd normals, Eigen::VectorXd offsets)
    : normals_(std::move(normals)), offsets_(std::move(offsets)) {
  if (normals_.rows() != offsets_.size()) {
    fail(ErrorKind::DimensionError, "polytope needs one offset per normal");
  }
}

bool Polytope::contains(const Eigen::VectorXd& theta, double slack) const {
  if (theta.size() != dim()) fail(ErrorKind::DimensionError, "point dimension mismatch");
  if (rows() == 0) return true;
  return ((normals_ * theta - offsets_).array() <= slack).all();
}

Polytope Polytope::with_row(const Eigen::VectorXd& normal, double offset) const {
  if (normal.size() != dim() && rows() > 0) fail(ErrorKind::DimensionError, "row dimension mismatch");
  Eigen::MatrixXd n(rows() + 1, normal.size());
  Eigen::VectorXd b(rows() + 1);
  if (rows() > 0) {
    n.topRows(rows()) = normals_;
    b.head(rows()) = offsets_;
  }
  n.row(rows()) = normal.transpose();
  b[rows()] = offset;
  return {std::move(n), std::move(b)};
}

double Ellipsoid::log_det() const {
  Eigen::LLT<Eigen::MatrixXd> llt(shape);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Polytope initial_box(const Eigen::VectorXd& c_low, const Eigen::VectorXd& c_high) {
  if (c_low.size() != c_high.size() || c_low.size() == 0) {
    fail(ErrorKind::DimensionError, "box bounds must be nonempty and of equal length");
  }
  if (!(c_low.array() < c_high.array()).all()) {
    fail(ErrorKind::EmptyBox, "need c_l < c_h in every component");
  }
  const auto r = c_low.size();
  Eigen::MatrixXd n(2 * r, r);
  n << Eigen::MatrixXd::Identity(r, r), -Eigen::MatrixXd::Identity(r, r);
  Eigen::VectorXd b(2 * r);
  b << c_high, -c_low;
  return {std::move(n), std::move(b)};
}

Cut build_cut(const DynamicsModel& dynamics, const CostSpec& cost,
              const FeatureConstraint& constraint, double gamma, const Trajectory& plan,
              const Eigen::VectorXd& correction) {
  const int m = dynamics.control_dim();
  if (correction.size() != m) fail(ErrorKind::DimensionError, "correction must live in control space");
  if (!(correction.array() != 0.0).any()) {
    fail(ErrorKind::DegenerateCorrection, "zero correction carries no direction");
  }

  const Linearization lin(dynamics, plan);
  const Eigen::VectorXd grad_j = lin.control_gradient(cost.partials(plan));
  const FeatureEvaluation fe = feature_values_and_gradients(constraint, dynamics, plan);

  // The correction only touches the first control block.
  const double a_dot_grad_j = correction.dot(grad_j.head(m));
  const double a_dot_grad_phi0 = correction.dot(fe.grad_phi0.head(m));

  Cut cut;
  cut.primary_normal = -a_dot_grad_j * fe.phi + gamma * fe.dphi_du.leftCols(m) * correction;
  cut.primary_offset = a_dot_grad_j * fe.phi0 - gamma * a_dot_grad_phi0;
  cut.feasibility_normal = fe.phi;
  cut.feasibility_offset = -fe.phi0;
  return cut;
}

namespace {

Polytope append_normalized(const Polytope& poly, const Eigen::VectorXd& normal, double offset) {
  const double norm = normal.norm();
  if (!std::isfinite(norm) || !std::isfinite(offset)) {
    fail(ErrorKind::NumericalDivergence, "cut row is not finite");
  }
  if (norm == 0.0) {
    if (offset >= 0.0) return poly;
    fail(ErrorKind::EmptyHypothesis, "cut row 0 <= " + std::to_string(offset) + " excludes everything");
  }
  return poly.with_row(normal / norm, offset / norm);
}

}  // namespace

Polytope apply_cut(const Polytope& poly, const Cut& cut) {
  if (cut.primary_normal.size() != poly.dim() || cut.feasibility_normal.size() != poly.dim()) {
    fail(ErrorKind::DimensionError, "cut dimension does not match the polytope");
  }
  Polytope out = append_normalized(poly, cut.primary_normal, cut.primary_offset);
  return append_normalized(out, cut.feasibility_normal, cut.feasibility_offset);
}

double containment_residual(const Ellipsoid& e, const Polytope& poly) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < poly.rows(); ++j) {
    const Eigen::VectorXd h = poly.normals().row(j).transpose();
    worst = std::max(worst, (e.shape * h).norm() + e.center.dot(h) - poly.offsets()[j]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Maximum-volume inscribed ellipsoid.
//
// Log-barrier path following on
//   min  -log det H - mu * sum_j log(b_j - h_j^T d - |H h_j|)
// over symmetric H (stored as its upper triangle) and d, with damped Newton
// steps and mu -> 0. A Chebyshev-ball phase supplies the strictly feasible
// start.

namespace {

struct UnitRows {
  Eigen::MatrixXd normals;
  Eigen::VectorXd offsets;
};

UnitRows normalize_rows(const Polytope& poly) {
  UnitRows out;
  std::vector<int> keep;
  Eigen::VectorXd norms = poly.normals().rowwise().norm();
  for (int j = 0; j < poly.rows(); ++j) {
    if (!std::isfinite(norms[j]) || !std::isfinite(poly.offsets()[j])) {
      fail(ErrorKind::NumericalDivergence, "polytope row is not finite");
    }
    if (norms[j] == 0.0) {
      if (poly.offsets()[j] < 0.0) fail(ErrorKind::InfeasiblePolytope, "row 0 <= b with b < 0");
      continue;
    }
    keep.push_back(j);
  }
  out.normals.resize(static_cast<Eigen::Index>(keep.size()), poly.dim());
  out.offsets.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const int j = keep[i];
    out.normals.row(i) = poly.normals().row(j) / norms[j];
    out.offsets[i] = poly.offsets()[j] / norms[j];
  }
  return out;
}

// Adds a far-away box so that every Newton subproblem is bounded; touching
// it marks the input as unbounded.
void add_guard_box(UnitRows& rows, double radius) {
  const auto r = rows.normals.cols();
  const auto m = rows.normals.rows();
  rows.normals.conservativeResize(m + 2 * r, r);
  rows.offsets.conservativeResize(m + 2 * r);
  rows.normals.bottomRows(2 * r) << Eigen::MatrixXd::Identity(r, r), -Eigen::MatrixXd::Identity(r, r);
  rows.offsets.tail(2 * r).setConstant(radius);
}

struct ChebyshevBall {
  Eigen::VectorXd center;
  double radius = 0.0;
};

// max t  s.t.  h_j^T d + t <= b_j  (unit normals), by barrier Newton.
ChebyshevBall chebyshev_ball(const UnitRows& rows, double scale) {
  const auto r = rows.normals.cols();
  const auto m = rows.normals.rows();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(r + 1);  // (d, t)
  z[r] = rows.offsets.minCoeff() - 1.0;

  auto slacks = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return rows.offsets - rows.normals * v.head(r) - Eigen::VectorXd::Constant(m, v[r]);
  };
  auto objective = [&](const Eigen::VectorXd& v, double mu, bool& ok) {
    const Eigen::VectorXd s = slacks(v);
    ok = (s.array() > 0.0).all();
    if (!ok) return 0.0;
    return -v[r] - mu * s.array().log().sum();
  };

  double mu = scale;
  const double mu_final = 1e-10 * scale;
  while (true) {
    for (int it = 0; it < 100; ++it) {
      const Eigen::VectorXd s = slacks(z);
      const Eigen::VectorXd inv = s.cwiseInverse();
      Eigen::MatrixXd G(m, r + 1);
      G << rows.normals, Eigen::VectorXd::Ones(m);  // d s_j / d z = -G_j
      Eigen::VectorXd grad = mu * G.transpose() * inv;
      grad[r] -= 1.0;
      const Eigen::MatrixXd hess =
          mu * G.transpose() * inv.cwiseAbs2().asDiagonal() * G +
          1e-14 * Eigen::MatrixXd::Identity(r + 1, r + 1);
      const Eigen::VectorXd dz = -hess.ldlt().solve(grad);
      const double decrement = -grad.dot(dz);
      if (!(decrement > 1e-14)) break;
      bool ok = false;
      const double f0 = objective(z, mu, ok);
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd trial = z + step * dz;
        const double f1 = objective(trial, mu, ok);
        if (ok && f1 <= f0 - 0.25 * step * decrement) {
          z = trial;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved || decrement < 1e-12) break;
    }
    if (mu <= mu_final) break;
    mu *= 0.1;
  }
  return {z.head(r), z[r]};
}

class MveBarrier {
 public:
  MveBarrier(const UnitRows& rows) : rows_(rows), r_(rows.normals.cols()) {
    for (Eigen::Index a = 0; a < r_; ++a) {
      for (Eigen::Index b = a; b < r_; ++b) pairs_.emplace_back(a, b);
    }
    p_ = static_cast<Eigen::Index>(pairs_.size());
  }

  Eigen::Index num_vars() const { return p_ + r_; }

  Eigen::VectorXd pack(const Eigen::MatrixXd& H, const Eigen::VectorXd& d) const {
    Eigen::VectorXd x(num_vars());
    for (Eigen::Index k = 0; k < p_; ++k) x[k] = H(pairs_[k].first, pairs_[k].second);
    x.tail(r_) = d;
    return x;
  }

  Eigen::MatrixXd shape(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd H(r_, r_);
    for (Eigen::Index k = 0; k < p_; ++k) {
      H(pairs_[k].first, pairs_[k].second) = x[k];
      H(pairs_[k].second, pairs_[k].first) = x[k];
    }
    return H;
  }

  // Returns false outside the domain (H not PD or a slack not positive).
  bool value(const Eigen::VectorXd& x, double mu, double& f) const {
    const Eigen::MatrixXd H = shape(x);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = x.tail(r_);
    const Eigen::MatrixXd HN = rows_.normals * H;  // row j = (H h_j)^T
    const Eigen::VectorXd slack = rows_.offsets - rows_.normals * d - HN.rowwise().norm();
    if (!(slack.array() > 0.0).all()) return false;
    f = -2.0 * llt.matrixLLT().diagonal().array().log().sum() - mu * slack.array().log().sum();
    return std::isfinite(f);
  }

  void derivatives(const Eigen::VectorXd& x, double mu, Eigen::VectorXd& grad,
                   Eigen::MatrixXd& hess) const {
    const Eigen::MatrixXd H = shape(x);
    const Eigen::MatrixXd Hi = H.llt().solve(Eigen::MatrixXd::Identity(r_, r_));
    const Eigen::VectorXd d = x.tail(r_);
    const Eigen::Index n = num_vars();
    grad = Eigen::VectorXd::Zero(n);
    hess = Eigen::MatrixXd::Zero(n, n);

    // -log det H
    for (Eigen::Index k = 0; k < p_; ++k) {
      const auto [a, b] = pairs_[k];
      grad[k] = a == b ? -Hi(a, a) : -2.0 * Hi(a, b);
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(r_, r_);
    Eigen::VectorXd g(n);
    Eigen::VectorXd dn(p_);
    for (Eigen::Index j = 0; j < rows_.normals.rows(); ++j) {
      const Eigen::VectorXd h = rows_.normals.row(j).transpose();
      const Eigen::VectorXd s = H * h;
      const double norm = s.norm();
      const Eigen::VectorXd u = s / norm;
      const double slack = rows_.offsets[j] - h.dot(d) - norm;
      for (Eigen::Index k = 0; k < p_; ++k) {
        const auto [a, b] = pairs_[k];
        dn[k] = a == b ? u[a] * h[a] : u[a] * h[b] + u[b] * h[a];
      }
      g.head(p_) = dn;
      g.tail(r_) = h;
      grad += (mu / slack) * g;
      hess.selfadjointView<Eigen::Lower>().rankUpdate(g, mu / (slack * slack));
      Eigen::VectorXd dn_full = Eigen::VectorXd::Zero(n);
      dn_full.head(p_) = dn;
      const double w = mu / (slack * norm);
      hess.selfadjointView<Eigen::Lower>().rankUpdate(dn_full, -w);
      S.noalias() += w * h * h.transpose();
    }

    // Quadratic forms tr(Hi E_k Hi E_l) and tr(E_k E_l S) over the symmetric
    // basis E_(a,b) = e_a e_b^T + e_b e_a^T (a != b), e_a e_a^T (a == b).
    auto terms = [&](Eigen::Index k, std::pair<Eigen::Index, Eigen::Index>* out) {
      const auto [a, b] = pairs_[k];
      out[0] = {a, b};
      if (a == b) return 1;
      out[1] = {b, a};
      return 2;
    };
    std::pair<Eigen::Index, Eigen::Index> tk[2], tl[2];
    for (Eigen::Index k = 0; k < p_; ++k) {
      const int nk = terms(k, tk);
      for (Eigen::Index l = 0; l <= k; ++l) {
        const int nl = terms(l, tl);
        double v = 0.0;
        for (int i = 0; i < nk; ++i) {
          const auto [pp, q] = tk[i];
          for (int jj = 0; jj < nl; ++jj) {
            const auto [rr, ss] = tl[jj];
            v += Hi(ss, pp) * Hi(q, rr);
            if (q == rr) v += S(ss, pp);
          }
        }
        hess(k, l) += v;
      }
    }
    hess = hess.selfadjointView<Eigen::Lower>();
  }

 private:
  const UnitRows& rows_;
  Eigen::Index r_;
  Eigen::Index p_ = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs_;
};

}  // namespace

Ellipsoid mve(const Polytope& poly, const MveOptions& options) {
  if (poly.dim() == 0) fail(ErrorKind::DimensionError, "MVE of a zero-dimensional polytope");
  UnitRows rows = normalize_rows(poly);
  const auto r = poly.dim();
  const double scale =
      1.0 + (rows.offsets.size() > 0 ? rows.offsets.cwiseAbs().maxCoeff() : 0.0);
  const double guard = 1e6 * scale;
  add_guard_box(rows, guard);

  const ChebyshevBall ball = chebyshev_ball(rows, scale);
  if (!(ball.radius > 1e-12 * scale)) {
    fail(ErrorKind::InfeasiblePolytope,
         "polytope has no interior (inscribed radius " + std::to_string(ball.radius) + ")");
  }
  if (ball.radius > 0.25 * guard) fail(ErrorKind::UnboundedPolytope, "polytope is not bounded");

  const MveBarrier barrier(rows);
  Eigen::VectorXd x =
      barrier.pack(0.5 * ball.radius * Eigen::MatrixXd::Identity(r, r), ball.center);

  const double mu_final = options.barrier_tolerance / std::max<Eigen::Index>(1, rows.normals.rows());
  double mu = 1.0;
  int newton_steps = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  while (true) {
    for (int it = 0; it < 100 && newton_steps < options.max_newton_steps; ++it, ++newton_steps) {
      barrier.derivatives(x, mu, grad, hess);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
      Eigen::VectorXd dx = -ldlt.solve(grad);
      double decrement = -grad.dot(dx);
      if (!std::isfinite(decrement) || decrement <= 0.0) {
        dx = -grad;  // fall back to steepest descent on a broken factorization
        decrement = grad.squaredNorm();
      }
      if (decrement < 1e-20) break;
      double f0 = 0.0;
      barrier.value(x, mu, f0);
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd trial = x + step * dx;
        double f1 = 0.0;
        if (barrier.value(trial, mu, f1) && f1 <= f0 - 0.25 * step * decrement) {
          x = trial;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved || decrement < 1e-16) break;
    }
    if (mu <= mu_final || newton_steps >= options.max_newton_steps) break;
    mu = std::max(mu * 0.1, mu_final);
  }

  Ellipsoid e{barrier.shape(x), x.tail(r)};
  const double extent = e.center.cwiseAbs().maxCoeff() + e.shape.colwise().norm().maxCoeff();
  if (!std::isfinite(extent)) fail(ErrorKind::NumericalDivergence, "MVE iterate is not finite");
  if (extent > 0.25 * guard) fail(ErrorKind::UnboundedPolytope, "polytope is not bounded");
  return e;
}

// ---------------------------------------------------------------------------

std::vector<Eigen::Vector2d> polygon_vertices_2d(const Polytope& poly) {
  if (poly.dim() != 2) fail(ErrorKind::DimensionError, "polygon routines need a 2D polytope");
  double extent = 1.0;
  for (int j = 0; j < poly.rows(); ++j) {
    const double n = poly.normals().row(j).norm();
    if (n > 0) extent = std::max(extent, std::abs(poly.offsets()[j]) / n);
  }
  const double R = 1e7 * extent;

  // Each vertex carries the line its outgoing edge lies on, so every new
  // vertex is the exact intersection of two constraint lines rather than an
  // interpolation along a (possibly very long) edge.
  struct Line {
    Eigen::Vector2d n;
    double b;
  };
  const auto intersect = [](const Line& a, const Line& c) {
    const double det = a.n.x() * c.n.y() - a.n.y() * c.n.x();
    return Eigen::Vector2d((a.b * c.n.y() - a.n.y() * c.b) / det, (a.n.x() * c.b - a.b * c.n.x()) / det);
  };
  std::vector<Eigen::Vector2d> verts = {{-R, -R}, {R, -R}, {R, R}, {-R, R}};
  std::vector<Line> edges = {{{0, -1}, R}, {{1, 0}, R}, {{0, 1}, R}, {{-1, 0}, R}};

  // Sutherland-Hodgman against each half-plane n^T p <= b.
  for (int j = 0; j < poly.rows() && !verts.empty(); ++j) {
    const Line clip{poly.normals().row(j).transpose(), poly.offsets()[j]};
    if (clip.n.squaredNorm() == 0.0) {
      if (clip.b < 0.0) verts.clear();
      continue;
    }
    std::vector<Eigen::Vector2d> out;
    std::vector<Line> out_edges;
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const Eigen::Vector2d& p = verts[i];
      const Eigen::Vector2d& q = verts[(i + 1) % verts.size()];
      const double fp = clip.n.dot(p) - clip.b;
      const double fq = clip.n.dot(q) - clip.b;
      if (fp <= 0.0) {
        out.push_back(p);
        out_edges.push_back(fp == 0.0 && fq > 0.0 ? clip : edges[i]);
      }
      if (fp < 0.0 && fq > 0.0) {
        out.push_back(intersect(edges[i], clip));
        out_edges.push_back(clip);
      } else if (fp > 0.0 && fq < 0.0) {
        out.push_back(intersect(edges[i], clip));
        out_edges.push_back(edges[i]);
      }
    }
    verts = std::move(out);
    edges = std::move(out_edges);
  }
  for (const auto& v : verts) {
    if (v.cwiseAbs().maxCoeff() >= 0.5 * R) fail(ErrorKind::UnboundedPolytope, "polygon is not bounded");
  }
  // Collapse coincident vertices left by clipping through existing vertices.
  std::vector<Eigen::Vector2d> unique;
  for (const auto& v : verts) {
    if (unique.empty() || (v - unique.back()).norm() > 1e-15 * extent) unique.push_back(v);
  }
  while (unique.size() > 1 && (unique.front() - unique.back()).norm() <= 1e-15 * extent) unique.pop_back();
  if (unique.size() < 3) unique.clear();
  return unique;
}

double polygon_area_2d(const Polytope& poly) {
  const auto verts = polygon_vertices_2d(poly);
  double twice = 0.0;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const auto& p = verts[i];
    const auto& q = verts[(i + 1) % verts.size()];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(twice);
}

}  // namespace safe_align
