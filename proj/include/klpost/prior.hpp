#pragma once

// Modified Gaussian KDE prior of H on R^nu. The mixture preserves the
// zero mean and identity covariance of normalized training points for any
// N_d. Only log(zeta) and its gradient are ever needed by the sampler.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "klpost/error.hpp"
#include "klpost/reduction.hpp"

namespace klpost {

/// Silverman bandwidth (4 / (n (2 + nu)))^{1/(nu + 4)}.
inline double silverman_bandwidth(Index n, Index nu) {
  if (n < 1 || nu < 1) throw argument_error("silverman_bandwidth: n and nu must be >= 1");
  const double n_d = static_cast<double>(n);
  const double dim = static_cast<double>(nu);
  return std::pow(4.0 / (n_d * (2.0 + dim)), 1.0 / (dim + 4.0));
}

struct PriorKde {
  MatrixXd centers;         // nu x N_d, eta_d^j
  MatrixXd scaled_centers;  // (s_hat / s_sb) * centers
  VectorXd scaled_sq_norms;
  double s_sb = 0.0;
  double s_hat = 0.0;
  double scale_ratio = 0.0;  // s_hat / s_sb
  double log_c_nu = 0.0;     // log of (sqrt(2 pi) s_hat)^{-nu}

  Index nu() const { return centers.rows(); }
  Index n_d() const { return centers.cols(); }
};

inline PriorKde fit_prior(const MatrixXd& centers) {
  if (centers.cols() < 1 || centers.rows() < 1) throw argument_error("fit_prior: empty centers");
  PriorKde p;
  const double n_d = static_cast<double>(centers.cols());
  const double nu = static_cast<double>(centers.rows());
  p.centers = centers;
  p.s_sb = silverman_bandwidth(centers.cols(), centers.rows());
  p.s_hat = p.s_sb / std::sqrt(p.s_sb * p.s_sb + (n_d - 1.0) / n_d);
  p.scale_ratio = p.s_hat / p.s_sb;
  p.log_c_nu = -nu * std::log(std::sqrt(2.0 * std::numbers::pi) * p.s_hat);
  p.scaled_centers = p.scale_ratio * centers;
  p.scaled_sq_norms = p.scaled_centers.colwise().squaredNorm().transpose();
  return p;
}

inline PriorKde fit_prior(const ReducedTrainingSet& reduced) { return fit_prior(reduced.eta); }

namespace detail {

// Kernel exponents -||scaled_center_j - eta||^2 / (2 s_hat^2), by direct differences.
inline VectorXd kernel_exponents(const PriorKde& prior, const VectorXd& eta) {
  const double inv = 1.0 / (2.0 * prior.s_hat * prior.s_hat);
  return -(prior.scaled_centers.colwise() - eta).colwise().squaredNorm().transpose() * inv;
}

}  // namespace detail

/// log zeta(eta) with zeta = (1/N_d) sum_j exp(-||(s_hat/s_sb) eta_d^j - eta||^2 / (2 s_hat^2)).
inline double log_zeta(const PriorKde& prior, const VectorXd& eta) {
  if (eta.size() != prior.nu()) throw argument_error("log_zeta: dimension mismatch");
  const VectorXd e = detail::kernel_exponents(prior, eta);
  const double top = e.maxCoeff();
  return top + std::log((e.array() - top).exp().sum()) -
         std::log(static_cast<double>(prior.n_d()));
}

/// grad(zeta)/zeta at eta: softmax-weighted pull towards the scaled centers.
inline VectorXd score(const PriorKde& prior, const VectorXd& eta) {
  if (eta.size() != prior.nu()) throw argument_error("score: dimension mismatch");
  const VectorXd e = detail::kernel_exponents(prior, eta);
  VectorXd w = (e.array() - e.maxCoeff()).exp();
  w /= w.sum();
  return (prior.scaled_centers * w - eta) / (prior.s_hat * prior.s_hat);
}

/// Column-wise score for a batch of points (nu x N). Squared distances use the
/// norm expansion so the bulk of the work is one matrix product.
inline MatrixXd score_batch(const PriorKde& prior, const MatrixXd& u) {
  const double inv = 1.0 / (2.0 * prior.s_hat * prior.s_hat);
  MatrixXd e = prior.scaled_centers.transpose() * u;  // N_d x N
  const Eigen::RowVectorXd u_sq = u.colwise().squaredNorm();
  for (Index c = 0; c < e.cols(); ++c) {
    auto col = e.col(c);
    double top = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < col.size(); ++j) {
      const double d2 = std::max(prior.scaled_sq_norms[j] + u_sq[c] - 2.0 * col[j], 0.0);
      col[j] = -d2 * inv;
      top = std::max(top, col[j]);
    }
    col = (col.array() - top).exp();
    col /= col.sum();
  }
  return (prior.scaled_centers * e - u) / (prior.s_hat * prior.s_hat);
}

struct PriorMoments {
  VectorXd mean;
  MatrixXd second_moment;
  bool normalized_input = false;  // centers had zero mean and identity covariance
};

/// Exact first two moments of the KDE mixture:
/// mean = ratio * mean(centers),
/// E{H H^T} = s_hat^2 I + ratio^2 (1/N_d) sum_j eta_j eta_j^T.
/// Equal to (0, I) when the centers are normalized.
inline PriorMoments prior_moments_closed_form(const PriorKde& prior, double tolerance = 1e-8) {
  const Index nu = prior.nu();
  const double n_d = static_cast<double>(prior.n_d());
  PriorMoments m;
  const VectorXd center_mean = prior.centers.rowwise().mean();
  m.mean = prior.scale_ratio * center_mean;
  const MatrixXd raw_second = prior.centers * prior.centers.transpose() / n_d;
  m.second_moment = prior.s_hat * prior.s_hat * MatrixXd::Identity(nu, nu) +
                    prior.scale_ratio * prior.scale_ratio * raw_second;
  if (prior.n_d() >= 2) {
    const MatrixXd centered = prior.centers.colwise() - center_mean;
    const MatrixXd cov = centered * centered.transpose() / (n_d - 1.0);
    m.normalized_input = center_mean.cwiseAbs().maxCoeff() <= tolerance &&
                         (cov - MatrixXd::Identity(nu, nu)).cwiseAbs().maxCoeff() <= tolerance;
  }
  return m;
}

}  // namespace klpost
