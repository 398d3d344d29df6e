#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <tuple>
#include <vector>

#include "klpost/sampler.hpp"

namespace {

using klpost::ChainState;
using klpost::ConstraintSpec;
using klpost::Index;
using klpost::MatrixXd;
using klpost::NoiseBank;
using klpost::PriorKde;
using klpost::SamplerConfig;
using klpost::VectorXd;

MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed) {
  const klpost::CounterRng rng(seed);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      m(i, j) = rng.normal(0, static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i));
  return m;
}

// Fixed increments: dW = w for every tuple, v0 = v for every chain.
struct ConstantNoise {
  double w = 0.0;
  double v = 0.0;
  double wiener_increment(std::size_t, std::size_t, std::size_t) const { return w; }
  double initial_momentum(std::size_t, std::size_t) const { return v; }
};

// Wraps a NoiseBank and records every Wiener lookup.
struct RecordingNoise {
  NoiseBank bank;
  mutable std::mutex mutex;
  mutable std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> calls;

  explicit RecordingNoise(std::uint64_t seed, double dt) : bank(seed, dt) {}
  double wiener_increment(std::size_t l, std::size_t m, std::size_t a) const {
    std::lock_guard lock(mutex);
    calls.emplace_back(l, m, a);
    return bank.wiener_increment(l, m, a);
  }
  double initial_momentum(std::size_t l, std::size_t a) const { return bank.initial_momentum(l, a); }
};

TEST(SamplerConfig, GammaAndDamping) {
  const SamplerConfig cfg;
  EXPECT_EQ(cfg.f0, 4.0);
  EXPECT_EQ(cfg.delta_t, 0.2188);
  EXPECT_EQ(cfg.m_s, 30);
  EXPECT_NEAR(cfg.gamma(), 0.2188, 1e-15);
  const double damp = (1.0 - cfg.gamma()) / (1.0 + cfg.gamma());
  EXPECT_NEAR(damp, 0.6409583196586806695109944207417131604857, 1e-15);
  for (double g : {1e-6, 0.5, 1.0, 10.0, 1e6}) {
    const double d = (1.0 - g) / (1.0 + g);
    EXPECT_GT(d, -1.0);
    EXPECT_LT(d, 1.0);
  }
}

TEST(SamplerConfig, ValidateRejectsBadValues) {
  SamplerConfig cfg;
  cfg.f0 = 0.0;
  EXPECT_THROW(cfg.validate(), klpost::argument_error);
  cfg = SamplerConfig{};
  cfg.delta_t = -1.0;
  EXPECT_THROW(cfg.validate(), klpost::argument_error);
  cfg = SamplerConfig{};
  cfg.n_mc = 0;
  EXPECT_THROW(cfg.validate(), klpost::argument_error);
}

TEST(InitChains, CopiesTrainingColumns) {
  const MatrixXd eta = gaussian(3, 5, 1);
  SamplerConfig cfg;
  const NoiseBank noise(1, cfg.delta_t);
  const ChainState s = klpost::init_chains(eta, cfg, noise);
  EXPECT_EQ(s.u, eta);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.v(2, 4), noise.initial_momentum(4, 2));
}

TEST(InitChains, TilesTrainingSet) {
  MatrixXd eta(1, 2);
  eta << 10.0, 20.0;
  SamplerConfig cfg;
  cfg.n_mc = 3;
  const ChainState s = klpost::init_chains(eta, cfg, NoiseBank(1, cfg.delta_t));
  ASSERT_EQ(s.u.cols(), 6);
  for (Index l = 0; l < 6; ++l) EXPECT_EQ(s.u(0, l), l % 2 == 0 ? 10.0 : 20.0);
}

TEST(InitChains, Deterministic) {
  const MatrixXd eta = gaussian(4, 7, 2);
  SamplerConfig cfg;
  cfg.n_mc = 2;
  const ChainState a = klpost::init_chains(eta, cfg, NoiseBank(9, cfg.delta_t));
  const ChainState b = klpost::init_chains(eta, cfg, NoiseBank(9, cfg.delta_t));
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.v, b.v);
}

TEST(Drift, ZeroLambdaIsScore) {
  const PriorKde prior = klpost::fit_prior(gaussian(3, 10, 3));
  const ConstraintSpec spec = klpost::make_constraint_spec(gaussian(3, 4, 4));
  const VectorXd u = gaussian(3, 1, 5).col(0);
  EXPECT_EQ(klpost::drift(prior, spec, VectorXd::Zero(4), u), klpost::score(prior, u));
}

TEST(Drift, ConstraintTermVanishesAtSingleTarget) {
  const PriorKde prior = klpost::fit_prior(gaussian(3, 10, 3));
  const ConstraintSpec spec = klpost::make_constraint_spec(gaussian(3, 1, 6));
  const VectorXd u = spec.eta_targ.col(0);
  EXPECT_TRUE(klpost::drift(prior, spec, VectorXd::Constant(1, 5.0), u).isApprox(klpost::score(prior, u), 1e-15));
}

TEST(Drift, GradientOfNegativePotential) {
  for (Index nu : {1, 3, 5}) {
    const PriorKde prior = klpost::fit_prior(gaussian(nu, 15, 7));
    const ConstraintSpec spec = klpost::make_constraint_spec(gaussian(nu, 4, 8));
    const VectorXd lambda = 2.0 * gaussian(4, 1, 9).col(0);
    auto neg_potential = [&](const VectorXd& u) {
      return klpost::log_zeta(prior, u) - lambda.dot(klpost::eval_hc(spec, u));
    };
    for (int k = 0; k < 4; ++k) {
      const VectorXd u = gaussian(nu, 1, 30 + static_cast<std::uint64_t>(k)).col(0);
      const VectorXd d = klpost::drift(prior, spec, lambda, u);
      const double h = 1e-5;
      for (Index a = 0; a < nu; ++a) {
        VectorXd up = u, dn = u;
        up[a] += h;
        dn[a] -= h;
        const double fd = (neg_potential(up) - neg_potential(dn)) / (2.0 * h);
        EXPECT_LE(std::abs(fd - d[a]), 1e-6 * std::max(1.0, std::abs(d[a])));
      }
    }
  }
}

TEST(Drift, BatchFunctorMatchesPointwise) {
  const PriorKde prior = klpost::fit_prior(gaussian(4, 20, 10));
  const ConstraintSpec spec = klpost::make_constraint_spec(gaussian(4, 6, 11));
  const VectorXd lambda = gaussian(6, 1, 12).col(0);
  const MatrixXd u = gaussian(4, 30, 13);
  const MatrixXd batch = klpost::KdeDrift(prior, spec, lambda)(u);
  for (Index c = 0; c < u.cols(); ++c)
    EXPECT_LT((batch.col(c) - klpost::drift(prior, spec, lambda, u.col(c))).norm(), 1e-10);
}

TEST(StormerVerlet, FreeFlight) {
  SamplerConfig cfg;
  cfg.f0 = 0.0;  // no damping, no noise
  ChainState s;
  s.u = gaussian(3, 4, 14);
  s.v = gaussian(3, 4, 15);
  const auto zero = [](const MatrixXd& u) -> MatrixXd { return MatrixXd::Zero(u.rows(), u.cols()); };
  const ChainState next = klpost::stormer_verlet_step(s, cfg, zero, ConstantNoise{1.0, 0.0});
  EXPECT_TRUE(next.u.isApprox(s.u + cfg.delta_t * s.v, 1e-15));
  EXPECT_EQ(next.v, s.v);
  EXPECT_EQ(next.step, 1);
}

TEST(StormerVerlet, HandComputedScalarStep) {
  // nu = 1, single KDE center at 0 and lambda = 0: L(u) = -u / s_hat^2.
  const PriorKde prior = klpost::fit_prior(MatrixXd::Zero(1, 1));
  const ConstraintSpec spec = klpost::make_constraint_spec(MatrixXd::Constant(1, 1, 0.5));
  SamplerConfig cfg;  // f0 = 4, dt = 0.2188
  ChainState s;
  s.u = MatrixXd::Constant(1, 1, 0.7);
  s.v = MatrixXd::Constant(1, 1, -0.3);
  const ChainState next = klpost::stormer_verlet_step(s, VectorXd::Zero(1), cfg, prior, spec, ConstantNoise{0.25, 0.0});

  // s_hat^2 = s_sb^2 / (s_sb^2 + 0) = 1 for N_d = 1, so L(u) = -u.
  ASSERT_NEAR(prior.s_hat, 1.0, 1e-15);
  const long double dt = 0.2188L, gamma = 0.2188L;
  const long double u_half = 0.7L + 0.5L * dt * -0.3L;         // 0.66718
  const long double v_next = (1 - gamma) / (1 + gamma) * -0.3L  //
                             + dt / (1 + gamma) * -u_half        //
                             + 2.0L / (1 + gamma) * 0.25L;
  const long double u_next = u_half + 0.5L * dt * v_next;
  EXPECT_NEAR(next.v(0, 0), static_cast<double>(v_next), 1e-14);
  EXPECT_NEAR(next.u(0, 0), static_cast<double>(u_next), 1e-14);
  EXPECT_NEAR(static_cast<double>(u_half), 0.66718, 1e-15);
}

TEST(StormerVerlet, RefusesStepBeyondMs) {
  const PriorKde prior = klpost::fit_prior(MatrixXd::Zero(1, 1));
  const ConstraintSpec spec = klpost::make_constraint_spec(MatrixXd::Zero(1, 1));
  SamplerConfig cfg;
  cfg.m_s = 2;
  ChainState s{MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), 2};
  EXPECT_THROW(klpost::stormer_verlet_step(s, VectorXd::Zero(1), cfg, prior, spec, ConstantNoise{}),
               klpost::argument_error);
}

TEST(StormerVerlet, DivergenceIdentifiesChainAndStep) {
  SamplerConfig cfg;
  ChainState s;
  s.u = MatrixXd::Constant(1, 200, 0.1);
  s.u(0, 130) = 1e10;
  s.v = MatrixXd::Zero(1, 200);
  const auto explode = [](const MatrixXd& u) -> MatrixXd { return 1e300 * u.array().square().matrix(); };
  try {
    klpost::stormer_verlet_step(s, cfg, explode, ConstantNoise{});
    FAIL();
  } catch (const klpost::chain_divergence& e) {
    EXPECT_EQ(e.chain(), 130u);
    EXPECT_EQ(e.step(), 1u);
    EXPECT_STREQ(e.what(), "chain divergence at (130, 1)");
  }
  cfg.threads = 3;
  try {
    klpost::stormer_verlet_step(s, cfg, explode, ConstantNoise{});
    FAIL();
  } catch (const klpost::chain_divergence& e) {
    EXPECT_EQ(e.chain(), 130u);
  }
}

class Chains : public ::testing::Test {
 protected:
  void SetUp() override {
    eta_ = gaussian(4, 150, 20);
    eta_ = eta_.colwise() - eta_.rowwise().mean();
    prior_ = klpost::fit_prior(eta_);
    spec_ = klpost::make_constraint_spec(gaussian(4, 6, 21));
    lambda_ = 0.5 * gaussian(6, 1, 22).col(0);
    cfg_.seed = 5;
    cfg_.n_mc = 2;
    cfg_.m_s = 10;
  }
  MatrixXd run(const SamplerConfig& cfg, const VectorXd& lambda) const {
    const NoiseBank noise(cfg.seed, cfg.delta_t);
    return klpost::run_chains(klpost::init_chains(eta_, cfg, noise), lambda, cfg, prior_, spec_, noise);
  }
  MatrixXd eta_;
  PriorKde prior_;
  ConstraintSpec spec_;
  VectorXd lambda_;
  SamplerConfig cfg_;
};

TEST_F(Chains, ZeroStepsReturnInitialPositions) {
  SamplerConfig cfg = cfg_;
  cfg.m_s = 0;
  const MatrixXd out = run(cfg, lambda_);
  EXPECT_EQ(out, eta_.replicate(1, 2));
}

TEST_F(Chains, RepeatedRunsBitIdentical) {
  const MatrixXd a = run(cfg_, lambda_);
  const MatrixXd b = run(cfg_, lambda_);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.allFinite());
  SamplerConfig other = cfg_;
  other.seed = 6;
  EXPECT_NE(run(other, lambda_), a);
}

TEST_F(Chains, SerialAndThreadedBitIdentical) {
  SamplerConfig threaded = cfg_;
  threaded.threads = 4;
  EXPECT_EQ(run(cfg_, lambda_), run(threaded, lambda_));
  threaded.threads = 0;
  EXPECT_EQ(run(cfg_, lambda_), run(threaded, lambda_));
}

TEST_F(Chains, StepwiseEqualsRun) {
  const NoiseBank noise(cfg_.seed, cfg_.delta_t);
  ChainState s = klpost::init_chains(eta_, cfg_, noise);
  for (Index m = 0; m < cfg_.m_s; ++m) s = klpost::stormer_verlet_step(s, lambda_, cfg_, prior_, spec_, noise);
  EXPECT_EQ(s.step, cfg_.m_s);
  EXPECT_EQ(s.u, run(cfg_, lambda_));
}

TEST_F(Chains, NoiseConsumptionIndependentOfLambda) {
  auto consumed = [&](const VectorXd& lambda) {
    RecordingNoise noise(cfg_.seed, cfg_.delta_t);
    klpost::run_chains(klpost::init_chains(eta_, cfg_, noise), lambda, cfg_, prior_, spec_, noise);
    auto calls = noise.calls;
    std::sort(calls.begin(), calls.end());
    return calls;
  };
  const auto a = consumed(VectorXd::Zero(6));
  const auto b = consumed(lambda_);
  EXPECT_EQ(a.size(), static_cast<std::size_t>(300 * 10 * 4));
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::adjacent_find(a.begin(), a.end()) == a.end());  // each tuple used once
}

TEST(RunChains, PriorInvarianceSmall) {
  // lambda = 0 keeps the KDE prior invariant: moments stay near (0, I).
  MatrixXd eta = gaussian(3, 40, 40);
  eta = eta.colwise() - eta.rowwise().mean();
  const MatrixXd cov = eta * eta.transpose() / 39.0;
  eta = Eigen::LLT<MatrixXd>(cov).matrixL().solve(eta);
  const PriorKde prior = klpost::fit_prior(eta);
  const ConstraintSpec spec = klpost::make_constraint_spec(gaussian(3, 2, 41));
  SamplerConfig cfg;
  cfg.n_mc = 100;
  cfg.seed = 3;
  const NoiseBank noise(cfg.seed, cfg.delta_t);
  const MatrixXd out = klpost::run_chains(klpost::init_chains(eta, cfg, noise), VectorXd::Zero(2), cfg, prior, spec, noise);
  const VectorXd mean = out.rowwise().mean();
  const MatrixXd c = out.colwise() - mean;
  const MatrixXd sample_cov = c * c.transpose() / static_cast<double>(out.cols() - 1);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.1);
  EXPECT_LT((sample_cov - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.15);
}

}  // namespace
