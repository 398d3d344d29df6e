#pragma once

// Finite representation of the characteristic-function constraint:
// Gaussian bumps h_r centred on the projected targets, their gradients, the
// target moment vector b^c and the mismatch diagnostic J.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "klpost/error.hpp"
#include "klpost/prior.hpp"
#include "klpost/reduction.hpp"

namespace klpost {

/// Bandwidth s of the constraint features, (4 / (n_r (2 + nu)))^{1/(nu + 4)}.
inline double bandwidth_s(Index n_r, Index nu) { return silverman_bandwidth(n_r, nu); }

namespace detail {

// ||a_i - b_j||^2 for all column pairs via ||a||^2 + ||b||^2 - 2<a, b>, clamped at 0.
inline MatrixXd pairwise_sq_dist(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd d = -2.0 * (a.transpose() * b);
  const VectorXd a_sq = a.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd b_sq = b.colwise().squaredNorm();
  d.colwise() += a_sq;
  d.rowwise() += b_sq;
  return d.cwiseMax(0.0);
}

}  // namespace detail

/// b_r = (1/N_r) sum_r' exp(-||eta_targ^r' - eta_targ^r||^2 / (nu s^2)).
/// Duplicated target columns are reported through `warnings` but kept.
inline VectorXd compute_bc(const MatrixXd& eta_targ, double s,
                           std::vector<std::string>* warnings = nullptr) {
  const Index n_r = eta_targ.cols();
  if (n_r < 1) throw argument_error("compute_bc: need at least one target");
  const double inv_len = 1.0 / (static_cast<double>(eta_targ.rows()) * s * s);
  VectorXd b(n_r);
  bool duplicates = false;
  for (Index r = 0; r < n_r; ++r) {
    double acc = 0.0;
    for (Index rp = 0; rp < n_r; ++rp) {
      const double d2 = (eta_targ.col(rp) - eta_targ.col(r)).squaredNorm();
      if (rp != r && std::sqrt(d2) < 1e-12) duplicates = true;
      acc += std::exp(-d2 * inv_len);
    }
    b[r] = acc / static_cast<double>(n_r);
  }
  if (duplicates && warnings)
    warnings->emplace_back("duplicated targets weaken constraint independence");
  return b;
}

struct ConstraintSpec {
  MatrixXd eta_targ;  // nu x N_r
  double s = 0.0;
  double inv_len = 0.0;  // 1 / (nu s^2)
  VectorXd b_c;          // N_r
  std::vector<std::string> warnings;

  Index nu() const { return eta_targ.rows(); }
  Index n_r() const { return eta_targ.cols(); }
};

inline ConstraintSpec make_constraint_spec(const MatrixXd& eta_targ) {
  if (eta_targ.rows() < 1 || eta_targ.cols() < 1)
    throw argument_error("make_constraint_spec: empty target matrix");
  if (!eta_targ.allFinite()) throw argument_error("make_constraint_spec: non-finite targets");
  ConstraintSpec c;
  c.eta_targ = eta_targ;
  c.s = bandwidth_s(eta_targ.cols(), eta_targ.rows());
  c.inv_len = 1.0 / (static_cast<double>(eta_targ.rows()) * c.s * c.s);
  c.b_c = compute_bc(eta_targ, c.s, &c.warnings);
  return c;
}

inline ConstraintSpec make_constraint_spec(const ProjectedTargets& targets) {
  return make_constraint_spec(targets.eta_targ);
}

/// h_r(eta) = exp(-||eta - eta_targ^r||^2 / (nu s^2)).
inline VectorXd eval_hc(const ConstraintSpec& spec, const VectorXd& eta) {
  if (eta.size() != spec.nu()) throw argument_error("eval_hc: dimension mismatch");
  return (-(spec.eta_targ.colwise() - eta).colwise().squaredNorm().transpose() * spec.inv_len)
      .array()
      .exp();
}

/// nu x N_r matrix with entries (2/(nu s^2)) (eta_targ^r - u)_alpha h_r(u).
inline MatrixXd grad_hc(const ConstraintSpec& spec, const VectorXd& u) {
  const VectorXd h = eval_hc(spec, u);
  MatrixXd g = spec.eta_targ.colwise() - u;
  return 2.0 * spec.inv_len * g * h.asDiagonal();
}

/// Feature matrix h^c for a batch of samples: N_r x N.
inline MatrixXd features(const ConstraintSpec& spec, const MatrixXd& samples) {
  if (samples.rows() != spec.nu()) throw argument_error("features: dimension mismatch");
  return (-spec.inv_len * detail::pairwise_sq_dist(spec.eta_targ, samples)).array().exp();
}

/// (1/N) sum_l h^c(eta^l).
inline VectorXd feature_mean(const ConstraintSpec& spec, const MatrixXd& samples) {
  if (samples.cols() < 1) throw argument_error("feature_mean: no samples");
  return features(spec, samples).rowwise().mean();
}

/// J = ||(1/N) sum_l h^c(eta^l) - b^c||.
inline double constraint_mismatch(const ConstraintSpec& spec, const MatrixXd& samples) {
  return (feature_mean(spec, samples) - spec.b_c).norm();
}

/// Column-wise [grad h^c(u)] lambda for a batch (nu x N):
/// (2/(nu s^2)) (T (lambda o h) - u <lambda, h>).
inline MatrixXd grad_hc_times_lambda_batch(const ConstraintSpec& spec, const VectorXd& lambda,
                                           const MatrixXd& u) {
  MatrixXd weighted = features(spec, u);  // N_r x N
  weighted = lambda.asDiagonal() * weighted;
  const Eigen::RowVectorXd totals = weighted.colwise().sum();
  MatrixXd out = spec.eta_targ * weighted;
  out -= u * totals.asDiagonal();
  return 2.0 * spec.inv_len * out;
}

}  // namespace klpost
