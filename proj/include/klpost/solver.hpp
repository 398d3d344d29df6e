#pragma once

// Damped Newton iteration on grad Gamma(lambda) = b^c - E{h^c(H_lambda)},
// with the expectation and the Hessian cov{h^c(H_lambda)} estimated from the
// constrained learned set generated at each multiplier.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "klpost/constraints.hpp"
#include "klpost/error.hpp"
#include "klpost/prior.hpp"
#include "klpost/random.hpp"
#include "klpost/sampler.hpp"

namespace klpost {

struct SolverConfig {
  Index i_max = 20;
  double alpha0 = 0.3;
  double alpha_growth = 1.5;  // after an iteration where err decreased
  double alpha_shrink = 0.5;  // after an iteration where err increased
  double alpha_min = 0.01;
  std::optional<double> hessian_jitter;  // absolute; overrides relative_jitter
  double relative_jitter = 0.1;          // jitter = relative_jitter * tr(cov) / N_r
  std::optional<double> err_target;
  bool cache_sets = true;  // keep the best set instead of regenerating it

  void validate() const {
    if (i_max < 1) throw argument_error("solver: i_max must be >= 1");
    if (!(alpha0 > 0.0 && alpha0 <= 1.0)) throw argument_error("solver: alpha0 must be in (0, 1]");
    if (!(alpha_growth >= 1.0)) throw argument_error("solver: alpha_growth must be >= 1");
    if (!(alpha_shrink > 0.0 && alpha_shrink <= 1.0))
      throw argument_error("solver: alpha_shrink must be in (0, 1]");
    if (!(alpha_min > 0.0 && alpha_min <= 1.0)) throw argument_error("solver: alpha_min must be in (0, 1]");
    if (hessian_jitter && !(*hessian_jitter >= 0.0)) throw argument_error("solver: jitter must be >= 0");
    if (!(relative_jitter >= 0.0)) throw argument_error("solver: relative jitter must be >= 0");
    if (err_target && !(*err_target > 0.0)) throw argument_error("solver: err_target must be > 0");
  }
};

struct SolverTrace {
  std::vector<VectorXd> lambdas;  // lambdas[i-1]: multiplier that generated set i
  std::vector<double> errs;
  std::vector<double> alphas;
  Index i_sol = 0;  // 1-based
  MatrixXd learned_set_sol;
  bool aborted = false;
  std::string abort_reason;

  Index iterations() const { return static_cast<Index>(errs.size()); }
  const VectorXd& lambda_sol() const { return lambdas.at(static_cast<std::size_t>(i_sol - 1)); }
  double err_sol() const { return errs.at(static_cast<std::size_t>(i_sol - 1)); }
};

/// b^c - (1/N) sum_l h^c(eta^l).
inline VectorXd estimate_gradient(const MatrixXd& samples, const ConstraintSpec& spec) {
  return spec.b_c - feature_mean(spec, samples);
}

inline MatrixXd feature_covariance(const MatrixXd& feats) {
  if (feats.cols() < 2) throw argument_error("covariance undefined");
  const MatrixXd centered = feats.colwise() - feats.rowwise().mean();
  MatrixXd cov = centered * centered.transpose() / static_cast<double>(feats.cols() - 1);
  return 0.5 * (cov + cov.transpose());
}

/// Empirical covariance of the features plus jitter * I.
inline MatrixXd estimate_hessian(const MatrixXd& samples, const ConstraintSpec& spec, double jitter) {
  if (samples.cols() < 2) throw argument_error("covariance undefined");
  MatrixXd h = feature_covariance(features(spec, samples));
  h.diagonal().array() += jitter;
  return h;
}

/// lambda - alpha * hess^{-1} grad through a Cholesky solve.
inline VectorXd newton_step(const VectorXd& lambda, const VectorXd& grad, const MatrixXd& hess,
                            double alpha) {
  if (grad.size() != lambda.size() || hess.rows() != lambda.size() || hess.cols() != lambda.size())
    throw argument_error("newton_step: dimension mismatch");
  Eigen::LLT<MatrixXd> llt(hess);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hess, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
    throw hessian_error(lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  }
  return lambda - alpha * llt.solve(grad);
}

/// ||b^c - (1/N) sum_l h^c(eta^l)|| / ||b^c||.
inline double err(const MatrixXd& samples, const ConstraintSpec& spec) {
  return estimate_gradient(samples, spec).norm() / spec.b_c.norm();
}

namespace detail {

struct NewtonRun {
  SolverTrace trace;
  MatrixXd last_set;
};

template <NoiseSource Noise>
NewtonRun newton_loop(const PriorKde& prior, const ConstraintSpec& spec, const MatrixXd& eta_d,
                      const SamplerConfig& scfg, const SolverConfig& cfg, const Noise& noise,
                      Index i_stop, bool keep_best) {
  NewtonRun run;
  SolverTrace& tr = run.trace;
  const ChainState init = init_chains(eta_d, scfg, noise);
  VectorXd lambda = VectorXd::Zero(spec.n_r());
  double alpha = cfg.alpha0;
  double best = std::numeric_limits<double>::infinity();
  MatrixXd previous;

  for (Index i = 1; i <= i_stop; ++i) {
    ChainState start = init;
    if (i >= 2) start.u = previous;  // warm start; momenta restart from the fixed bank

    MatrixXd set;
    try {
      set = run_chains(std::move(start), lambda, scfg, prior, spec, noise);
    } catch (const chain_divergence& e) {
      tr.aborted = true;
      tr.abort_reason = e.what();
      break;
    }

    const MatrixXd feats = features(spec, set);
    const VectorXd grad = spec.b_c - feats.rowwise().mean();
    const double e = grad.norm() / spec.b_c.norm();
    if (!tr.errs.empty()) {
      alpha = e < tr.errs.back() ? std::min(1.0, alpha * cfg.alpha_growth)
                                 : std::max(cfg.alpha_min, alpha * cfg.alpha_shrink);
    }
    tr.lambdas.push_back(lambda);
    tr.errs.push_back(e);
    tr.alphas.push_back(alpha);
    if (e < best) {
      best = e;
      if (keep_best) tr.learned_set_sol = set;
    }
    if (i == i_stop || (cfg.err_target && e <= *cfg.err_target)) {
      run.last_set = std::move(set);
      break;
    }

    MatrixXd hess = feature_covariance(feats);
    const double jitter =
        cfg.hessian_jitter.value_or(cfg.relative_jitter * hess.trace() / static_cast<double>(spec.n_r()));
    hess.diagonal().array() += jitter;
    try {
      lambda = newton_step(lambda, grad, hess, alpha);
    } catch (const hessian_error& ex) {
      tr.aborted = true;
      tr.abort_reason = ex.what();
      run.last_set = std::move(set);
      break;
    }
    previous = std::move(set);
  }

  if (!tr.errs.empty()) {
    tr.i_sol = 1 + static_cast<Index>(std::min_element(tr.errs.begin(), tr.errs.end()) - tr.errs.begin());
  }
  return run;
}

}  // namespace detail

/// Newton iteration starting from lambda = 0. lambda_sol is the recorded
/// multiplier with the smallest err. A chain divergence or a Hessian failure
/// stops the loop with `aborted` set and the trace so far kept.
template <NoiseSource Noise>
SolverTrace solve_lambda(const PriorKde& prior, const ConstraintSpec& spec, const MatrixXd& eta_d,
                         const SamplerConfig& scfg, const SolverConfig& cfg, const Noise& noise) {
  scfg.validate();
  cfg.validate();
  if (prior.nu() != spec.nu() || eta_d.rows() != spec.nu())
    throw argument_error("solve_lambda: dimension mismatch between prior, constraints and data");

  detail::NewtonRun run = detail::newton_loop(prior, spec, eta_d, scfg, cfg, noise, cfg.i_max, cfg.cache_sets);
  SolverTrace tr = std::move(run.trace);
  if (tr.errs.empty()) return tr;
  if (!cfg.cache_sets) {
    // Deterministic replay up to i_sol reproduces the same set.
    SolverConfig replay = cfg;
    replay.err_target.reset();
    tr.learned_set_sol =
        detail::newton_loop(prior, spec, eta_d, scfg, replay, noise, tr.i_sol, false).last_set;
  }
  return tr;
}

inline SolverTrace solve_lambda(const PriorKde& prior, const ConstraintSpec& spec,
                                const ReducedTrainingSet& reduced, const SamplerConfig& scfg,
                                const SolverConfig& cfg) {
  return solve_lambda(prior, spec, reduced.eta, scfg, cfg, NoiseBank(scfg.seed, scfg.delta_t));
}

}  // namespace klpost
