#include <chrono>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "perfect/compose.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/models/ising.hpp"
#include "perfect/models/ladder.hpp"
#include "perfect/models/mixture.hpp"
#include "perfect/models/nonmonotone3.hpp"
#include "perfect/noise.hpp"
#include "perfect/philox.hpp"
#include "perfect/stats.hpp"
#include "support/test_models.hpp"

namespace {

using namespace perfect;
using perfect::models::LadderWalk;
using perfect::models::NonMonotoneWalk;
using perfect::fixtures::IidModel;
using perfect::fixtures::uniform_atom;

// Known-answer vectors published with Random123 (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(Philox4x32::apply({0, 0, 0, 0}, {0, 0}),
            (Philox4x32::counter_type{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::apply({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (Philox4x32::counter_type{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::apply({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (Philox4x32::counter_type{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Noise, SameKeyIsBitIdentical) {
  const NoiseShape shape{3, 2, {0.3, 0.9}};
  const auto a = noise_at(42, -17, 5, shape);
  const auto b = noise_at(42, -17, 5, shape);
  EXPECT_EQ(a, b);
  for (double u : a.uniforms) {
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  EXPECT_EQ(a.aux_uniform(4, 1000), b.aux_uniform(4, 1000));
}

TEST(Noise, DistinctKeysDiffer) {
  const NoiseShape shape{1, 0, {}};
  EXPECT_NE(noise_at(1, -1, 0, shape).uniforms[0], noise_at(1, -2, 0, shape).uniforms[0]);
  EXPECT_NE(noise_at(1, -1, 0, shape).uniforms[0], noise_at(1, -1, 1, shape).uniforms[0]);
  EXPECT_NE(noise_at(1, -1, 0, shape).uniforms[0], noise_at(2, -1, 0, shape).uniforms[0]);
}

TEST(Noise, AdjacentTimesUncorrelated) {
  const NoiseShape shape{1, 0, {}};
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 100000; ++s) {
    a.push_back(noise_at(s, -1, 0, shape).uniforms[0]);
    b.push_back(noise_at(s, -2, 0, shape).uniforms[0]);
  }
  const auto ma = stats::mean_se(a), mb = stats::mean_se(b);
  double cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma.mean) * (b[i] - mb.mean);
  cov /= static_cast<double>(a.size() - 1);
  const double corr = cov / std::sqrt(ma.variance * mb.variance);
  EXPECT_LT(std::abs(corr), 0.02);
}

TEST(Noise, FarPastIsConstantTime) {
  const NoiseShape shape{4, 4, {0.5}};
  const auto start = std::chrono::steady_clock::now();
  const auto a = noise_at(9, -1'000'000, 0, shape);
  const auto b = noise_at(9, -1'000'000'000'000LL, 0, shape);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_LT(std::chrono::duration<double>(elapsed).count(), 0.01);
  EXPECT_NE(a.uniforms[0], b.uniforms[0]);
}

TEST(Noise, BernoulliSlotsIndependentOfOtherProbabilities) {
  const auto a = noise_at(3, 4, 0, NoiseShape{2, 0, {0.2, 0.5}});
  const auto b = noise_at(3, 4, 0, NoiseShape{2, 0, {0.9, 0.5}});
  EXPECT_EQ(a.uniforms, b.uniforms);
  EXPECT_EQ(a.bernoullis[1], b.bernoullis[1]);
}

TEST(Noise, ScriptedAtomWithoutAuxThrows) {
  const auto atom = uniform_atom(0.5);
  EXPECT_THROW(atom.aux_uniform(0, 0), ConfigError);
}

TEST(Compose, DegenerateModelForwardIsLastAtom) {
  const IidModel m;
  const std::vector<NoiseAtom> atoms{uniform_atom(0.1), uniform_atom(0.2), uniform_atom(0.3)};
  EXPECT_EQ(forward_compose(m, 0.9, atoms), 0.3);
}

TEST(Compose, DegenerateModelBackwardIsFirstAtom) {
  const IidModel m;
  std::vector<NoiseAtom> atoms;
  for (int t = 1; t <= 6; ++t) {
    atoms.push_back(uniform_atom(0.1 * t));
    EXPECT_EQ(backward_compose(m, 0.9, atoms), 0.1);
  }
}

TEST(Compose, EmptyCompositionReturnsStart) {
  const LadderWalk m(0.4);
  const std::vector<NoiseAtom> none;
  EXPECT_EQ(forward_compose(m, 2.0, none), 2.0);
  EXPECT_EQ(backward_compose(m, 2.0, none), 2.0);
}

TEST(Compose, SingleAtomBackwardEqualsForward) {
  const LadderWalk m(0.4);
  for (double x : m.states()) {
    for (int b = 0; b < 2; ++b) {
      const std::vector<NoiseAtom> one{bernoulli_atom({b})};
      EXPECT_EQ(forward_compose(m, x, one), backward_compose(m, x, one));
    }
  }
}

TEST(Compose, LadderThreeUpMoves) {
  const LadderWalk m(0.123);
  const std::vector<NoiseAtom> ups{bernoulli_atom({1}), bernoulli_atom({1}), bernoulli_atom({1})};
  EXPECT_EQ(forward_compose(m, 0.25, ups), 4.0);
}

TEST(Compose, ShapeMismatchThrows) {
  const LadderWalk m(0.5);
  const std::vector<NoiseAtom> bad{uniform_atom(0.5)};
  EXPECT_THROW(forward_compose(m, 0.25, bad), ConfigError);
  EXPECT_THROW(backward_compose(m, 0.25, bad), ConfigError);
}

// Forward and backward compositions over the same i.i.d. atoms share a law.
template <typename M>
void expect_exchangeable(const M& model, typename M::state_type x0, int steps, std::uint64_t seed) {
  using State = typename M::state_type;
  const auto labels = model.states();
  std::vector<State> fwd, bwd;
  const KeyedNoise noise{seed, 0, model.noise_shape()};
  for (std::uint32_t r = 0; r < 100000; ++r) {
    std::vector<NoiseAtom> atoms;
    for (int t = 1; t <= steps; ++t) atoms.push_back(noise_at(seed, t, r, model.noise_shape()));
    fwd.push_back(forward_compose(model, x0, atoms));
    bwd.push_back(backward_compose(model, x0, atoms));
  }
  const auto a = stats::tally<State>(fwd, labels);
  const auto b = stats::tally<State>(bwd, labels);
  const auto rep = stats::two_sample_chi_square(a, b);
  EXPECT_GT(rep.p_value, 0.001) << "chi-square " << rep.statistic;
}

TEST(Compose, ExchangeabilityLadder) { expect_exchangeable(LadderWalk(0.3), 0.25, 5, 11); }
TEST(Compose, ExchangeabilityNonMonotone) { expect_exchangeable(NonMonotoneWalk(0.1), 2.0, 4, 12); }
TEST(Compose, ExchangeabilityMixture) {
  expect_exchangeable(models::MixtureLatentChain(models::default_mixture_data()), 0, 3, 13);
}
TEST(Compose, ExchangeabilityIsing2x2) {
  const models::Ising2D ising(2, 0.4);
  expect_exchangeable(ising, ising.min_state(), 3, 14);
}

TEST(Stationary, LadderHalfIsUniform) {
  const auto oracle = exact_stationary(LadderWalk(0.5).transition_spec());
  for (double v : oracle.pi()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Stationary, LadderMatchesDetailedBalance) {
  for (double p : {0.1, 0.3, 0.7, 0.9}) {
    const auto oracle = exact_stationary(LadderWalk(p).transition_spec());
    const double r = p / (1.0 - p);
    const double z = 1.0 + r + r * r + r * r * r;
    const std::vector<double> expected{1.0 / z, r / z, r * r / z, r * r * r / z};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(oracle.pi()[i], expected[i], 1e-12);
  }
}

TEST(Stationary, FixedVectorProperty) {
  const auto spec = NonMonotoneWalk(0.1).transition_spec();
  const auto oracle = exact_stationary(spec);
  Eigen::RowVectorXd pi = Eigen::Map<const Eigen::RowVectorXd>(oracle.pi().data(), 3);
  EXPECT_LT((pi * spec.matrix - pi).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
}

TEST(Stationary, IdentityIsReducible) {
  FiniteChainSpec<int> spec{{0, 1, 2}, Eigen::MatrixXd::Identity(3, 3)};
  try {
    exact_stationary(spec);
    FAIL() << "expected ChainPropertyError";
  } catch (const ChainPropertyError& e) {
    EXPECT_NE(std::string(e.what()).find("reducible"), std::string::npos);
  }
}

TEST(Stationary, FlipIsPeriodic) {
  Eigen::MatrixXd m(2, 2);
  m << 0, 1, 1, 0;
  try {
    exact_stationary(FiniteChainSpec<int>{{0, 1}, m});
    FAIL() << "expected ChainPropertyError";
  } catch (const ChainPropertyError& e) {
    EXPECT_NE(std::string(e.what()).find("periodic"), std::string::npos);
  }
}

TEST(Stationary, RowsMustSumToOne) {
  Eigen::MatrixXd m(2, 2);
  m << 0.5, 0.4, 0.5, 0.5;
  EXPECT_THROW(exact_stationary(FiniteChainSpec<int>{{0, 1}, m}), ConfigError);
}

TEST(TotalVariation, StationaryStartIsZero) {
  const auto oracle = exact_stationary(LadderWalk(0.3).transition_spec());
  for (long k : {0L, 1L, 5L, 20L}) EXPECT_NEAR(exact_tv_at(oracle, oracle.pi(), k), 0.0, 1e-12);
}

TEST(TotalVariation, PointMassAtZeroSteps) {
  const auto spec = LadderWalk(0.3).transition_spec();
  const auto oracle = exact_stationary(spec);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(exact_tv_at(oracle, point_mass(spec, spec.labels[i]), 0), 1.0 - oracle.pi()[i], 1e-12);
  }
}

TEST(TotalVariation, MatchesNaiveMatrixPower) {
  const double p = 0.1;
  const auto spec = LadderWalk(p).transition_spec();
  const auto oracle = exact_stationary(spec);
  // Independent route: hand-rolled vector-matrix products on the birth-death rows.
  std::vector<double> v{0, 0, 0, 1};
  for (int step = 0; step < 5; ++step) {
    std::vector<double> next(4, 0.0);
    for (int i = 0; i < 4; ++i) {
      next[std::min(i + 1, 3)] += v[static_cast<std::size_t>(i)] * p;
      next[std::max(i - 1, 0)] += v[static_cast<std::size_t>(i)] * (1 - p);
    }
    v = next;
  }
  const double r = p / (1 - p);
  const double z = 1 + r + r * r + r * r * r;
  const std::vector<double> pi{1 / z, r / z, r * r / z, r * r * r / z};
  double tv = 0.0;
  for (int i = 0; i < 4; ++i) tv += 0.5 * std::abs(v[static_cast<std::size_t>(i)] - pi[static_cast<std::size_t>(i)]);
  EXPECT_NEAR(exact_tv_at(oracle, point_mass(spec, 4.0), 5), tv, 1e-12);
}

TEST(TotalVariation, RejectsNonDistribution) {
  const auto oracle = exact_stationary(LadderWalk(0.3).transition_spec());
  EXPECT_THROW(exact_tv_at(oracle, {0.5, 0.5, 0.5, 0.0}, 1), ConfigError);
  EXPECT_THROW(exact_tv_at(oracle, {1.0}, 1), ConfigError);
}

// Empirical one-step frequencies of the SRS match the declared matrix rows.
template <typename M>
void expect_srs_matches_spec(const M& model, std::uint64_t seed) {
  const auto spec = model.transition_spec();
  constexpr int kDraws = 100000;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    std::vector<double> counts(spec.size(), 0.0);
    for (std::uint32_t r = 0; r < kDraws; ++r) {
      const auto y = model.step(spec.labels[i], noise_at(seed, static_cast<std::int64_t>(i), r, model.noise_shape()));
      counts[spec.index_of(y)] += 1.0;
    }
    for (std::size_t j = 0; j < spec.size(); ++j) {
      const double p = spec.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double se = std::sqrt(p * (1 - p) / kDraws);
      EXPECT_NEAR(counts[j] / kDraws, p, 3 * se + 1e-15) << "row " << i << " col " << j;
    }
  }
}

TEST(OracleConsistency, Ladder) { expect_srs_matches_spec(LadderWalk(0.3), 21); }
TEST(OracleConsistency, NonMonotone) { expect_srs_matches_spec(NonMonotoneWalk(0.1), 22); }
TEST(OracleConsistency, MixtureLatent) {
  expect_srs_matches_spec(models::MixtureLatentChain(models::default_mixture_data()), 23);
}

}  // namespace
