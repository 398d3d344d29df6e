#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "klpost/error.hpp"
#include "klpost/reduction.hpp"

namespace klpost {

struct PosteriorEnsemble {
  MatrixXd q_samples;  // n_q x N
  MatrixXd w_samples;  // n_w x N
  std::uint64_t seed = 0;
  VectorXd lambda_sol;
  double err_sol = 0.0;
};

/// Maps learned reduced samples back to physical (unscaled) Q and W.
inline PosteriorEnsemble build_posterior(const ReducedBasis& basis, const ScalingParams& params,
                                         const MatrixXd& learned) {
  if (!learned.allFinite()) throw argument_error("build_posterior: non-finite learned set");
  Reconstruction r = reconstruct(basis, learned, params);
  PosteriorEnsemble out;
  out.q_samples = std::move(r.q);
  out.w_samples = std::move(r.w);
  return out;
}

/// sqrt(E{X_k^2}) over the columns of `samples`.
inline double mean_square_norm(const MatrixXd& samples, Index component) {
  if (component < 0 || component >= samples.rows())
    throw argument_error("mean_square_norm: component out of range");
  if (samples.cols() < 1) throw argument_error("mean_square_norm: no samples");
  return std::sqrt(samples.row(component).squaredNorm() / static_cast<double>(samples.cols()));
}

/// `points` equally spaced values over mean +- 4 standard deviations.
inline VectorXd auto_grid(const VectorXd& samples, Index points = 201) {
  if (points < 2) throw argument_error("auto_grid: need at least 2 points");
  const double mean = samples.mean();
  const double sd = samples.size() > 1
                        ? std::sqrt((samples.array() - mean).square().sum() /
                                    static_cast<double>(samples.size() - 1))
                        : 0.0;
  const double half = sd > 0.0 ? 4.0 * sd : std::max(1.0, std::abs(mean)) * 1e-3;
  return VectorXd::LinSpaced(points, mean - half, mean + half);
}

/// 1-D Gaussian KDE with Silverman's rule h = (4 / (3 N))^{1/5} sd.
/// Zero-variance samples fall back to a narrow kernel and add a warning.
inline VectorXd marginal_pdf(const VectorXd& samples, const VectorXd& grid,
                             std::vector<std::string>* warnings = nullptr) {
  const Index n = samples.size();
  if (n < 2) throw argument_error("marginal_pdf: need at least 2 samples");
  for (Index g = 1; g < grid.size(); ++g)
    if (grid[g] < grid[g - 1]) throw argument_error("marginal_pdf: grid must be sorted");
  const double mean = samples.mean();
  const double sd = std::sqrt((samples.array() - mean).square().sum() / static_cast<double>(n - 1));
  double h = std::pow(4.0 / (3.0 * static_cast<double>(n)), 0.2) * sd;
  if (!(h > 0.0)) {
    if (warnings) warnings->emplace_back("zero-variance samples: pdf is a Dirac mass");
    h = 1e-6 * std::max(1.0, std::abs(mean));
  }
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  VectorXd pdf(grid.size());
  for (Index g = 0; g < grid.size(); ++g)
    pdf[g] = norm * ((samples.array() - grid[g]) / h).square().unaryExpr([](double z) {
      return std::exp(-0.5 * z);
    }).sum();
  return pdf;
}

/// Trapezoid rule on a sorted grid.
inline double trapezoid(const VectorXd& grid, const VectorXd& values) {
  double acc = 0.0;
  for (Index g = 1; g < grid.size(); ++g) acc += 0.5 * (grid[g] - grid[g - 1]) * (values[g] + values[g - 1]);
  return acc;
}

}  // namespace klpost
