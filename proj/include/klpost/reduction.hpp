#pragma once

// Scaling, PCA reduced representation of X = (Q, W), projection of target
// realizations of Q onto the reduced coordinates, and reconstruction.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "klpost/error.hpp"

namespace klpost {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct IndexRange {
  Index start = 0;
  Index size = 0;

  Index end() const { return start + size; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Joint training realizations (one per column) plus target realizations of Q.
struct RawDataset {
  MatrixXd x;        // n_x x N_d
  IndexRange q_rows;  // rows of x holding Q
  IndexRange w_rows;  // rows of x holding W
  MatrixXd targets;   // n_q x N_r

  Index n_x() const { return x.rows(); }
  Index n_q() const { return q_rows.size; }
  Index n_w() const { return w_rows.size; }
  Index n_d() const { return x.cols(); }
  Index n_r() const { return targets.cols(); }

  /// Builds a dataset whose first n_q rows are Q and the rest W.
  static RawDataset with_leading_q(MatrixXd x, Index n_q, MatrixXd targets) {
    RawDataset d;
    const Index n_x = x.rows();
    d.x = std::move(x);
    d.q_rows = {0, n_q};
    d.w_rows = {n_q, n_x - n_q};
    d.targets = std::move(targets);
    return d;
  }

  void validate() const {
    if (q_rows.size < 1) throw argument_error("dataset: Q block is empty");
    if (q_rows.size + w_rows.size != n_x())
      throw argument_error("dataset: n_x != n_q + n_w");
    const bool q_first = q_rows.start == 0 && w_rows.start == q_rows.size;
    const bool w_first = w_rows.start == 0 && q_rows.start == w_rows.size;
    if (!q_first && !w_first) throw argument_error("dataset: Q/W rows do not partition x");
    if (n_d() < 2) throw argument_error("dataset: need at least 2 training realizations");
    if (n_r() < 1) throw argument_error("dataset: need at least 1 target realization");
    if (targets.rows() != n_q())
      throw argument_error("dataset: target rows (" + std::to_string(targets.rows()) +
                           ") != n_q (" + std::to_string(n_q()) + ")");
    if (!x.allFinite() || !targets.allFinite())
      throw argument_error("dataset: non-finite entries");
  }
};

/// Per-component affine map x -> (x - shift) / scale.
struct ScalingParams {
  VectorXd shift;
  VectorXd scale;

  MatrixXd apply(const MatrixXd& x) const {
    return (x.colwise() - shift).array().colwise() / scale.array();
  }
  MatrixXd invert(const MatrixXd& y) const {
    return (y.array().colwise() * scale.array()).matrix().colwise() + shift;
  }
  MatrixXd apply_rows(const MatrixXd& x, IndexRange rows) const {
    return (x.colwise() - shift.segment(rows.start, rows.size)).array().colwise() /
           scale.segment(rows.start, rows.size).array();
  }
  MatrixXd invert_rows(const MatrixXd& y, IndexRange rows) const {
    return (y.array().colwise() * scale.segment(rows.start, rows.size).array())
               .matrix()
               .colwise() +
           shift.segment(rows.start, rows.size);
  }
};

struct ScaledDataset {
  RawDataset data;
  ScalingParams params;
};

/// Min-max scaling to [0, 1] per component, fitted on the training columns.
/// Targets reuse the Q-block parameters. Constant components keep unit scale
/// and are shifted to zero.
inline ScaledDataset scale_dataset(const RawDataset& raw) {
  raw.validate();
  ScalingParams p;
  p.shift = raw.x.rowwise().minCoeff();
  const VectorXd hi = raw.x.rowwise().maxCoeff();
  p.scale = hi - p.shift;
  for (Index i = 0; i < p.scale.size(); ++i)
    if (!(p.scale[i] > 0.0)) p.scale[i] = 1.0;

  ScaledDataset out{raw, p};
  out.data.x = p.apply(raw.x);
  out.data.targets = p.apply_rows(raw.targets, raw.q_rows);
  return out;
}

struct ReducedBasis {
  VectorXd x_bar;      // n_x
  MatrixXd phi;        // n_x x nu, orthonormal columns
  VectorXd kappa;      // nu eigenvalues, descending
  VectorXd kappa_all;  // every retained positive eigenvalue (<= N_d - 1)
  Index nu = 0;
  MatrixXd phi_q;   // n_q x nu
  MatrixXd phi_w;   // n_w x nu
  MatrixXd v_proj;  // n_q x nu; empty when [phi_q]^T [phi_q] is singular
  double v_condition = 0.0;
  double eps_pca = 0.0;
  double trace_cov = 0.0;
  IndexRange q_rows;
  IndexRange w_rows;

  VectorXd q_bar() const { return x_bar.segment(q_rows.start, q_rows.size); }
  VectorXd w_bar() const { return x_bar.segment(w_rows.start, w_rows.size); }
  bool can_project() const { return v_proj.size() > 0; }
};

/// Training set in reduced coordinates; columns eta_d^j.
struct ReducedTrainingSet {
  MatrixXd eta;  // nu x N_d
};

struct ReductionFit {
  ReducedBasis basis;
  ReducedTrainingSet reduced;
};

inline constexpr double kRankTolerance = 1e-12;
inline constexpr double kMaxProjectionCondition = 1e12;

namespace detail {

inline double pca_error_from(const VectorXd& kappa_all, double trace, Index nu) {
  const double kept = kappa_all.head(nu).sum();
  return std::clamp(1.0 - kept / trace, 0.0, 1.0);
}

// [V] = [phi_q] ([phi_q]^T [phi_q])^{-1} [kappa]^{-1/2}, or empty if singular.
inline void build_projection(ReducedBasis& b) {
  const MatrixXd gram = b.phi_q.transpose() * b.phi_q;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  b.v_condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(b.v_condition <= kMaxProjectionCondition)) {
    b.v_proj.resize(0, 0);
    return;
  }
  const MatrixXd inv_gram = gram.llt().solve(MatrixXd::Identity(b.nu, b.nu));
  b.v_proj = b.phi_q * inv_gram * b.kappa.cwiseSqrt().cwiseInverse().asDiagonal();
}

}  // namespace detail

/// Thin-SVD PCA of the scaled training set. nu is the smallest value below
/// N_d - 1 whose relative PCA error is <= eps_pca, else the full rank.
inline ReductionFit fit_reduction(const RawDataset& scaled, double eps_pca) {
  scaled.validate();
  if (!(eps_pca > 0.0 && eps_pca < 1.0)) throw argument_error("fit_reduction: eps_pca must be in (0, 1)");
  const Index n_d = scaled.n_d();
  const double denom = static_cast<double>(n_d - 1);

  ReducedBasis b;
  b.q_rows = scaled.q_rows;
  b.w_rows = scaled.w_rows;
  b.eps_pca = eps_pca;
  b.x_bar = scaled.x.rowwise().mean();
  const MatrixXd centered = scaled.x.colwise() - b.x_bar;

  // Diagonal of the covariance, one component at a time.
  double trace = 0.0;
  for (Index i = 0; i < centered.rows(); ++i) trace += centered.row(i).squaredNorm() / denom;
  b.trace_cov = trace;

  Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinU);
  const VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv[0] > 0.0) || !(trace > 0.0))
    throw degenerate_error("degenerate training set");
  Index rank = 0;
  while (rank < sv.size() && sv[rank] > kRankTolerance * sv[0]) ++rank;
  const Index nu_max = std::min(rank, n_d - 1);
  b.kappa_all = sv.head(nu_max).array().square() / denom;

  Index nu = nu_max;
  for (Index k = 1; k < std::min(nu_max, n_d - 1); ++k) {
    if (detail::pca_error_from(b.kappa_all, trace, k) <= eps_pca) {
      nu = k;
      break;
    }
  }
  b.nu = nu;
  b.kappa = b.kappa_all.head(nu);
  b.phi = svd.matrixU().leftCols(nu);
  for (Index a = 0; a < nu; ++a) {
    Index arg = 0;
    b.phi.col(a).cwiseAbs().maxCoeff(&arg);
    if (b.phi(arg, a) < 0.0) b.phi.col(a) = -b.phi.col(a);
  }
  b.phi_q = b.phi.middleRows(b.q_rows.start, b.q_rows.size);
  b.phi_w = b.phi.middleRows(b.w_rows.start, b.w_rows.size);
  detail::build_projection(b);

  ReducedTrainingSet reduced;
  reduced.eta = b.kappa.cwiseSqrt().cwiseInverse().asDiagonal() * (b.phi.transpose() * centered);
  return {std::move(b), std::move(reduced)};
}

/// 1 - (kappa_1 + ... + kappa_nu_test) / tr(C_X), clamped to [0, 1].
inline double pca_error(const ReducedBasis& basis, Index nu_test) {
  if (nu_test < 1 || nu_test > basis.kappa_all.size())
    throw argument_error("pca_error: nu_test " + std::to_string(nu_test) + " outside [1, " +
                         std::to_string(basis.kappa_all.size()) + "]");
  return detail::pca_error_from(basis.kappa_all, basis.trace_cov, nu_test);
}

struct ProjectedTargets {
  MatrixXd eta_targ;  // nu x N_r
  VectorXd q_bar;
};

/// eta_targ^r = [V]^T (q_targ^r - q_bar) for scaled target columns.
inline ProjectedTargets project_targets(const ReducedBasis& basis, const MatrixXd& scaled_targets) {
  if (scaled_targets.rows() != basis.q_rows.size)
    throw argument_error("project_targets: target rows != n_q");
  if (!basis.can_project())
    throw rank_error("Q-block rank deficient; projection undefined (condition " +
                     std::to_string(basis.v_condition) + ")");
  ProjectedTargets out;
  out.q_bar = basis.q_bar();
  out.eta_targ = basis.v_proj.transpose() * (scaled_targets.colwise() - out.q_bar);
  return out;
}

struct Reconstruction {
  MatrixXd q;  // n_q x N
  MatrixXd w;  // n_w x N
};

/// Q = q_bar + [phi_q][kappa]^{1/2} eta and likewise for W, per column, in
/// scaled coordinates.
inline Reconstruction reconstruct(const ReducedBasis& basis, const MatrixXd& eta) {
  if (eta.rows() != basis.nu) throw argument_error("reconstruct: eta rows != nu");
  const MatrixXd scaled_eta = basis.kappa.cwiseSqrt().asDiagonal() * eta;
  Reconstruction r;
  r.q = (basis.phi_q * scaled_eta).colwise() + basis.q_bar();
  r.w = (basis.phi_w * scaled_eta).colwise() + basis.w_bar();
  return r;
}

/// Same as above, mapped back to physical units.
inline Reconstruction reconstruct(const ReducedBasis& basis, const MatrixXd& eta,
                                  const ScalingParams& params) {
  Reconstruction r = reconstruct(basis, eta);
  r.q = params.invert_rows(r.q, basis.q_rows);
  r.w = params.invert_rows(r.w, basis.w_rows);
  return r;
}

}  // namespace klpost
