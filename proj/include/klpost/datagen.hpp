#pragma once

// Synthetic problems: the Gaussian diagnostic for the constraint mismatch J
// and a small supervised problem Q = f(W) + noise with a shifted target
// parameterization.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "klpost/constraints.hpp"
#include "klpost/error.hpp"
#include "klpost/random.hpp"
#include "klpost/reduction.hpp"

namespace klpost {

struct GaussianCaseConfig {
  Index nu = 100;
  Index n_d = 1000;
  Index n_r = 100;
  double m_targ = 0.0;
  double sigma_targ = 1.0;
  std::uint64_t direction_seed = 0;
  std::uint64_t sample_seed = 0;

  void validate() const {
    if (nu < 1 || n_d < 1 || n_r < 1) throw argument_error("gaussian case: nu, n_d, n_r must be >= 1");
    if (!(m_targ >= -3.0 && m_targ <= 3.0)) throw argument_error("gaussian case: m_targ outside [-3, 3]");
    if (!(sigma_targ >= 0.1 - 1e-12 && sigma_targ <= 2.3 + 1e-12))
      throw argument_error("gaussian case: sigma_targ outside [0.1, 2.3]");
  }
};

struct GaussianCase {
  MatrixXd h;       // nu x n_d, N(0, I)
  MatrixXd h_targ;  // nu x n_r, N(m a, sigma I)
  VectorXd direction;
};

namespace detail {

inline VectorXd gaussian_direction(Index nu, std::uint64_t seed) {
  const CounterRng rng(derive_seed(seed, "gaussian.direction"));
  VectorXd a(nu);
  for (Index k = 0; k < nu; ++k) a[k] = rng.uniform(0, static_cast<std::uint32_t>(k), 0);
  return a;
}

inline MatrixXd standard_normal_matrix(Index rows, Index cols, std::uint64_t seed,
                                       std::string_view label) {
  const CounterRng rng(derive_seed(seed, label));
  MatrixXd z(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      z(i, j) = rng.normal(0, static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i));
  return z;
}

}  // namespace detail

/// H ~ N(0, I_nu) and H_targ ~ N(m_targ a, sigma_targ I_nu), with a uniform on
/// [0, 1]^nu fixed by direction_seed. Covariance is sigma_targ * I (not squared).
inline GaussianCase gen_gaussian_case(const GaussianCaseConfig& cfg) {
  cfg.validate();
  GaussianCase out;
  out.direction = detail::gaussian_direction(cfg.nu, cfg.direction_seed);
  out.h = detail::standard_normal_matrix(cfg.nu, cfg.n_d, cfg.sample_seed, "gaussian.h");
  const MatrixXd z = detail::standard_normal_matrix(cfg.nu, cfg.n_r, cfg.sample_seed, "gaussian.targets");
  out.h_targ = (std::sqrt(cfg.sigma_targ) * z).colwise() + cfg.m_targ * out.direction;
  return out;
}

struct SweepConfig {
  Index nu = 100;
  Index n_d = 1000;
  Index n_r = 100;
  std::vector<double> m_values;      // defaults to -3..3 step 1
  std::vector<double> sigma_values;  // defaults to 0.1..2.3 step 0.2
  std::uint64_t direction_seed = 0;
  std::uint64_t sample_seed = 0;

  static std::vector<double> default_m() {
    std::vector<double> v;
    for (int i = -3; i <= 3; ++i) v.push_back(static_cast<double>(i));
    return v;
  }
  static std::vector<double> default_sigma() {
    std::vector<double> v;
    for (int k = 0; k < 12; ++k) v.push_back(0.1 + 0.2 * static_cast<double>(k));
    return v;
  }
};

struct SurfacePoint {
  double m = 0.0;
  double sigma = 0.0;
  double j = 0.0;
};

struct JSurface {
  std::vector<SurfacePoint> points;  // m-major order
  std::size_t argmin = 0;

  const SurfacePoint& min_point() const { return points.at(argmin); }
};

/// J(m, sigma) on a grid. H, the standard normal target draws and the
/// direction a are shared by every node, so J varies only through (m, sigma).
inline JSurface sweep_j(const SweepConfig& cfg) {
  const std::vector<double> ms = cfg.m_values.empty() ? SweepConfig::default_m() : cfg.m_values;
  const std::vector<double> sigmas = cfg.sigma_values.empty() ? SweepConfig::default_sigma() : cfg.sigma_values;
  GaussianCaseConfig base;
  base.nu = cfg.nu;
  base.n_d = cfg.n_d;
  base.n_r = cfg.n_r;
  base.direction_seed = cfg.direction_seed;
  base.sample_seed = cfg.sample_seed;

  JSurface out;
  double best = std::numeric_limits<double>::infinity();
  for (double m : ms) {
    for (double sigma : sigmas) {
      GaussianCaseConfig node = base;
      node.m_targ = m;
      node.sigma_targ = sigma;
      const GaussianCase gc = gen_gaussian_case(node);
      const ConstraintSpec spec = make_constraint_spec(gc.h_targ);
      const double j = constraint_mismatch(spec, gc.h);
      if (j < best) {
        best = j;
        out.argmin = out.points.size();
      }
      out.points.push_back({m, sigma, j});
    }
  }
  return out;
}

enum class SupervisedMap { polynomial, identity };

struct SyntheticSupervisedConfig {
  Index n_w = 10;
  Index n_q = 40;
  Index n_d = 200;
  Index n_r = 50;
  double noise = 0.01;
  double w_spread = 0.3;        // std of each W component around 1
  double quadratic = 0.3;       // weight of the quadratic coupling in f
  double target_shift = 0.5;    // mean shift of W for the targets, in units of w_spread
  double target_spread = 1.0;   // std ratio of target W to training W
  SupervisedMap map = SupervisedMap::polynomial;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_w < 1 || n_q < 1) throw argument_error("supervised: n_w and n_q must be >= 1");
    if (n_d < 2 || n_r < 1) throw argument_error("supervised: need n_d >= 2 and n_r >= 1");
    if (!(noise >= 0.0) || !(w_spread > 0.0) || !(target_spread > 0.0))
      throw argument_error("supervised: noise >= 0, spreads > 0 required");
    if (map == SupervisedMap::identity && n_q != n_w)
      throw argument_error("supervised: identity map needs n_q == n_w");
  }
};

struct SupervisedCase {
  RawDataset dataset;  // Q rows first, then W; targets filled
  MatrixXd target_w;   // W that generated the targets (reference only)
  std::function<VectorXd(const VectorXd&)> forward;  // noise-free f(w)
};

/// Training: w = 1 + w_spread g, q = f(w) + noise e. Targets: same f with
/// w = 1 + w_spread (target_shift + target_spread g').
inline SupervisedCase gen_supervised(const SyntheticSupervisedConfig& cfg) {
  cfg.validate();
  const MatrixXd a = detail::standard_normal_matrix(cfg.n_q, cfg.n_w, cfg.seed, "supervised.linear") /
                     std::sqrt(static_cast<double>(cfg.n_w));
  const MatrixXd b = detail::standard_normal_matrix(cfg.n_q, cfg.n_w, cfg.seed, "supervised.coupling") /
                     std::sqrt(static_cast<double>(cfg.n_w));
  const double quad = cfg.quadratic;
  std::function<VectorXd(const VectorXd&)> f;
  if (cfg.map == SupervisedMap::identity) {
    f = [](const VectorXd& w) -> VectorXd { return w; };
  } else {
    f = [a, b, quad](const VectorXd& w) -> VectorXd {
      const VectorXd bw = b * w;
      return a * w + quad * bw.cwiseProduct(bw);
    };
  }

  auto draw = [&](Index count, double shift, double spread, std::string_view wl, std::string_view el,
                  MatrixXd& w_out) {
    const MatrixXd g = detail::standard_normal_matrix(cfg.n_w, count, cfg.seed, wl);
    const MatrixXd e = detail::standard_normal_matrix(cfg.n_q, count, cfg.seed, el);
    w_out = (cfg.w_spread * (spread * g.array() + shift) + 1.0).matrix();
    MatrixXd q(cfg.n_q, count);
    for (Index j = 0; j < count; ++j) q.col(j) = f(w_out.col(j)) + cfg.noise * e.col(j);
    return q;
  };

  SupervisedCase out;
  MatrixXd w_train;
  const MatrixXd q_train = draw(cfg.n_d, 0.0, 1.0, "supervised.train.w", "supervised.train.noise", w_train);
  const MatrixXd q_targ = draw(cfg.n_r, cfg.target_shift, cfg.target_spread, "supervised.target.w",
                               "supervised.target.noise", out.target_w);
  MatrixXd x(cfg.n_q + cfg.n_w, cfg.n_d);
  x << q_train, w_train;
  out.dataset = RawDataset::with_leading_q(std::move(x), cfg.n_q, q_targ);
  out.forward = std::move(f);
  return out;
}

}  // namespace klpost
