#pragma once

// MCMC generator of H_lambda: the dissipative Hamiltonian ISDE
//   dU = V dt,  dV = L_lambda(U) dt - (f0/2) V dt + sqrt(f0) dW
// integrated with the stochastic Stoermer-Verlet scheme. One realization per
// chain is taken at t_s = M_s * dt.
//
// Chains are processed in fixed blocks of columns. Block boundaries never
// depend on the thread count and the noise is a stateless lookup, so serial
// and threaded runs are bit-identical.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "klpost/constraints.hpp"
#include "klpost/error.hpp"
#include "klpost/prior.hpp"
#include "klpost/random.hpp"

namespace klpost {

template <typename N>
concept NoiseSource = requires(const N& n, std::size_t i) {
  { n.wiener_increment(i, i, i) } -> std::convertible_to<double>;
  { n.initial_momentum(i, i) } -> std::convertible_to<double>;
};

struct SamplerConfig {
  double f0 = 4.0;
  double delta_t = 0.2188;
  Index m_s = 30;
  Index n_mc = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // 0 = hardware concurrency

  double gamma() const { return f0 * delta_t / 4.0; }

  void validate() const {
    if (!(f0 > 0.0)) throw argument_error("sampler: f0 must be > 0");
    if (!(delta_t > 0.0)) throw argument_error("sampler: delta_t must be > 0");
    if (m_s < 0) throw argument_error("sampler: m_s must be >= 0");
    if (n_mc < 1) throw argument_error("sampler: n_mc must be >= 1");
  }
};

struct ChainState {
  MatrixXd u;  // nu x N positions
  MatrixXd v;  // nu x N momenta
  Index step = 0;

  Index n_chains() const { return u.cols(); }
};

inline constexpr Index kChainBlock = 128;

/// u_0^l = eta_d^j with l = j + (k-1) N_d; v_0 from the reserved momentum stream.
template <NoiseSource Noise>
ChainState init_chains(const MatrixXd& eta_d, const SamplerConfig& cfg, const Noise& noise) {
  if (cfg.n_mc < 1) throw argument_error("init_chains: n_mc must be >= 1");
  const Index nu = eta_d.rows();
  const Index n_d = eta_d.cols();
  ChainState s;
  s.u = eta_d.replicate(1, cfg.n_mc);
  s.v.resize(nu, n_d * cfg.n_mc);
  for (Index l = 0; l < s.v.cols(); ++l)
    for (Index a = 0; a < nu; ++a)
      s.v(a, l) = noise.initial_momentum(static_cast<std::size_t>(l), static_cast<std::size_t>(a));
  return s;
}

template <NoiseSource Noise>
ChainState init_chains(const ReducedTrainingSet& reduced, const SamplerConfig& cfg,
                       const Noise& noise) {
  return init_chains(reduced.eta, cfg, noise);
}

/// L_lambda(u) = grad(zeta)/zeta - [grad h^c(u)] lambda.
inline VectorXd drift(const PriorKde& prior, const ConstraintSpec& spec, const VectorXd& lambda,
                      const VectorXd& u) {
  if (lambda.size() != spec.n_r()) throw argument_error("drift: lambda size != N_r");
  return score(prior, u) - grad_hc(spec, u) * lambda;
}

/// Batched drift used by the integrator.
class KdeDrift {
 public:
  KdeDrift(const PriorKde& prior, const ConstraintSpec& spec, const VectorXd& lambda)
      : prior_(&prior), spec_(&spec), lambda_(&lambda), active_(!lambda.isZero(0.0)) {
    if (lambda.size() != spec.n_r()) throw argument_error("drift: lambda size != N_r");
    if (prior.nu() != spec.nu()) throw argument_error("drift: prior and constraint nu differ");
  }

  MatrixXd operator()(const MatrixXd& u) const {
    MatrixXd out = score_batch(*prior_, u);
    if (active_) out -= grad_hc_times_lambda_batch(*spec_, *lambda_, u);
    return out;
  }

 private:
  const PriorKde* prior_;
  const ConstraintSpec* spec_;
  const VectorXd* lambda_;
  bool active_;
};

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Advances chains [first, first + u.cols()) by `steps` steps starting at `step0`.
template <typename Drift, NoiseSource Noise>
void advance_block(Eigen::Ref<MatrixXd> u, Eigen::Ref<MatrixXd> v, Index first, Index step0,
                   Index steps, const SamplerConfig& cfg, const Drift& drift_fn,
                   const Noise& noise) {
  const double dt = cfg.delta_t;
  const double gamma = cfg.gamma();
  const double damp = (1.0 - gamma) / (1.0 + gamma);
  const double force = dt / (1.0 + gamma);
  const double kick = std::sqrt(cfg.f0) / (1.0 + gamma);
  const Index nu = u.rows();
  MatrixXd dw(nu, u.cols());
  for (Index m = step0; m < step0 + steps; ++m) {
    for (Index c = 0; c < u.cols(); ++c)
      for (Index a = 0; a < nu; ++a)
        dw(a, c) = noise.wiener_increment(static_cast<std::size_t>(first + c),
                                          static_cast<std::size_t>(m),
                                          static_cast<std::size_t>(a));
    u += (0.5 * dt) * v;
    const MatrixXd l = drift_fn(MatrixXd(u));
    v = damp * v + force * l + kick * dw;
    u += (0.5 * dt) * v;
    for (Index c = 0; c < u.cols(); ++c)
      if (!u.col(c).allFinite() || !v.col(c).allFinite())
        throw chain_divergence(static_cast<std::size_t>(first + c), static_cast<std::size_t>(m + 1));
  }
}

template <typename Drift, NoiseSource Noise>
void advance(ChainState& state, Index steps, const SamplerConfig& cfg, const Drift& drift_fn,
             const Noise& noise) {
  const Index n = state.n_chains();
  const Index n_blocks = (n + kChainBlock - 1) / kChainBlock;
  auto run_block = [&](Index b) {
    const Index first = b * kChainBlock;
    const Index width = std::min(kChainBlock, n - first);
    advance_block(state.u.middleCols(first, width), state.v.middleCols(first, width), first,
                  state.step, steps, cfg, drift_fn, noise);
  };

  const unsigned threads =
      std::min<unsigned>(resolve_threads(cfg.threads), static_cast<unsigned>(std::max<Index>(n_blocks, 1)));
  if (threads <= 1) {
    for (Index b = 0; b < n_blocks; ++b) run_block(b);
  } else {
    std::atomic<Index> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    std::size_t failed_chain = std::numeric_limits<std::size_t>::max();
    auto worker = [&] {
      for (Index b = next++; b < n_blocks; b = next++) {
        try {
          run_block(b);
        } catch (const chain_divergence& e) {
          std::lock_guard lock(failure_mutex);
          if (e.chain() < failed_chain) {
            failed_chain = e.chain();
            failure = std::current_exception();
          }
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  state.step += steps;
}

}  // namespace detail

/// One Stoermer-Verlet step with an arbitrary batched drift u (nu x B) -> (nu x B):
///   u_{m+1/2} = u_m + (dt/2) v_m
///   v_{m+1}   = ((1-g)/(1+g)) v_m + (dt/(1+g)) L(u_{m+1/2}) + (sqrt(f0)/(1+g)) dW_{m+1}
///   u_{m+1}   = u_{m+1/2} + (dt/2) v_{m+1}
/// with g = f0 dt / 4.
template <typename Drift, NoiseSource Noise>
ChainState stormer_verlet_step(ChainState state, const SamplerConfig& cfg, const Drift& drift_fn,
                               const Noise& noise) {
  if (state.u.rows() != state.v.rows() || state.u.cols() != state.v.cols())
    throw argument_error("stormer_verlet_step: u/v shape mismatch");
  detail::advance(state, 1, cfg, drift_fn, noise);
  return state;
}

template <NoiseSource Noise>
ChainState stormer_verlet_step(ChainState state, const VectorXd& lambda, const SamplerConfig& cfg,
                               const PriorKde& prior, const ConstraintSpec& spec,
                               const Noise& noise) {
  if (state.step >= cfg.m_s) throw argument_error("stormer_verlet_step: already at step m_s");
  return stormer_verlet_step(std::move(state), cfg, KdeDrift(prior, spec, lambda), noise);
}

/// Runs the remaining steps up to m_s and returns the positions at t_s: the
/// constrained learned set D_{H_lambda}.
template <typename Drift, NoiseSource Noise>
MatrixXd run_chains(ChainState state, const SamplerConfig& cfg, const Drift& drift_fn,
                    const Noise& noise) {
  if (state.u.rows() != state.v.rows() || state.u.cols() != state.v.cols())
    throw argument_error("run_chains: u/v shape mismatch");
  if (state.step < cfg.m_s) detail::advance(state, cfg.m_s - state.step, cfg, drift_fn, noise);
  return std::move(state.u);
}

template <NoiseSource Noise>
MatrixXd run_chains(ChainState init, const VectorXd& lambda, const SamplerConfig& cfg,
                    const PriorKde& prior, const ConstraintSpec& spec, const Noise& noise) {
  return run_chains(std::move(init), cfg, KdeDrift(prior, spec, lambda), noise);
}

}  // namespace klpost
