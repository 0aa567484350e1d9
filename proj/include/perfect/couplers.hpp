#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "perfect/cftp.hpp"
#include "perfect/errors.hpp"
#include "perfect/model.hpp"
#include "perfect/models/decreasing_density.hpp"
#include "perfect/noise.hpp"

namespace perfect {

inline constexpr std::uint64_t kRejectionCap = 1'000'000;

// Gamma(a, rate b) kernels with b in [b0, b1] are all bounded below by
// r(y) = y^{a-1} b0^a e^{-y b1} / Gamma(a), whose mass is rho = (b0/b1)^a and
// whose normalized law is R = Gamma(a, b1).
class GammaMinorizer {
 public:
  GammaMinorizer(double a, double b0, double b1) : a_(a), b0_(b0), b1_(b1) {
    if (!(a > 0.0)) throw ConfigError("gamma minorizer: shape must be > 0");
    if (!(b0 > 0.0)) throw ConfigError("gamma minorizer: rates must be > 0");
    if (b0 > b1) throw ConfigError("gamma minorizer: need b0 <= b1");
  }

  double a() const noexcept { return a_; }
  double b0() const noexcept { return b0_; }
  double b1() const noexcept { return b1_; }
  double rho() const { return std::pow(b0_ / b1_, a_); }

  double density(double y, double b) const {
    if (y <= 0.0) return 0.0;
    return std::exp((a_ - 1.0) * std::log(y) + a_ * std::log(b) - y * b - std::lgamma(a_));
  }
  double cdf(double y, double b) const { return y <= 0.0 ? 0.0 : boost::math::gamma_p(a_, b * y); }
  double r(double y) const {
    if (y <= 0.0) return 0.0;
    return std::exp((a_ - 1.0) * std::log(y) + a_ * std::log(b0_) - y * b1_ - std::lgamma(a_));
  }

  // Q(y | b) = (F(y | b) - rho R(y)) / (1 - rho).
  double residual_density(double y, double b) const { return (density(y, b) - r(y)) / (1.0 - rho()); }
  double residual_cdf(double y, double b) const { return (cdf(y, b) - rho() * cdf(y, b1_)) / (1.0 - rho()); }

  double gamma_quantile(double u, double b) const { return boost::math::gamma_p_inv(a_, u) / b; }
  double sample_r(double u) const { return gamma_quantile(u, b1_); }

  // Residual draw by rejection: y ~ f(.|b), kept with probability 1 - r(y)/f(y|b).
  // Pairs of auxiliary uniforms (2k, 2k+1) from `stream` drive attempt k.
  double sample_residual(double b, const NoiseAtom& atom, std::uint32_t stream = 0) const {
    if (rho() >= 1.0) throw ConfigError("gamma minorizer: residual is empty when rho = 1");
    const double scale = std::pow(b0_ / b, a_);
    for (std::uint64_t k = 0; k < kRejectionCap; ++k) {
      const double y = gamma_quantile(atom.aux_uniform(stream, 2 * k), b);
      const double keep = 1.0 - scale * std::exp(-y * (b1_ - b));
      if (atom.aux_uniform(stream, 2 * k + 1) < keep) return y;
    }
    throw CapExceeded("gamma residual: no acceptance in " + std::to_string(kRejectionCap) + " proposals");
  }

 private:
  double a_, b0_, b1_;
};

inline GammaMinorizer gamma_minorizer(double a, double b0, double b1) { return GammaMinorizer(a, b0, b1); }

// Chain on (0, inf) with kernel Gamma(a, b_x), b_x = b0 + (b1 - b0)/(1 + x),
// written as a split SRS: bernoulli(rho) picks the x-free R component.
class GammaKernelChain {
 public:
  using state_type = double;

  explicit GammaKernelChain(GammaMinorizer g) : g_(g) {}
  GammaKernelChain(double a, double b0, double b1) : g_(a, b0, b1) {}

  const GammaMinorizer& minorizer() const noexcept { return g_; }
  double rate(double x) const { return g_.b0() + (g_.b1() - g_.b0()) / (1.0 + x); }

  NoiseShape noise_shape() const { return NoiseShape{1, 0, {g_.rho()}}; }

  double step(double x, const NoiseAtom& atom) const { return split_step(x, atom).value; }

  struct SplitResult {
    double value;
    bool coalesced;
  };

  SplitResult split_step(double x, const NoiseAtom& atom) const {
    if (atom.bernoullis.at(0)) return {g_.sample_r(atom.uniforms.at(0)), true};
    return {g_.sample_residual(rate(x), atom), false};
  }

  // Plain draw from f(. | x) by inversion; the forward-chain oracle.
  double direct_step(double x, double u) const { return g_.gamma_quantile(u, rate(x)); }

 private:
  GammaMinorizer g_;
};

struct MultigammaDraw {
  double value = 0.0;
  std::int64_t T = 0;
};

// T ~ Geometric(rho), start from an R draw, then T - 1 residual steps.
inline MultigammaDraw multigamma_exact_draw(const GammaKernelChain& chain, std::uint64_t seed,
                                            std::uint32_t replicate = 0, std::int64_t cap = std::int64_t{1} << 30) {
  const auto& g = chain.minorizer();
  const double rho = g.rho();
  const NoiseShape shape{1, 0, {}};
  const auto head = noise_at(seed, 0, replicate, shape);
  std::int64_t T = 1;
  if (rho < 1.0) {
    const double t = 1.0 + std::floor(std::log(head.uniforms[0]) / std::log1p(-rho));
    if (!(t <= static_cast<double>(cap))) throw CapExceeded("multigamma: geometric T above cap");
    T = static_cast<std::int64_t>(t);
  }
  double x = g.sample_r(head.aux_uniform(0, 0));
  for (std::int64_t t = 1; t < T; ++t) {
    const auto atom = noise_at(seed, t, replicate, shape);
    x = g.sample_residual(chain.rate(x), atom);
  }
  return {x, T};
}

// Random-walk Metropolis for N(0,1) with proposals coupled through a shared
// auxiliary draw Z ~ g = N(0, g_sd^2). Atom: normals {Z/g_sd, Y - x},
// uniforms {U for the proposal switch, V for the M-H accept}.
class CommonProposalWalk {
 public:
  using state_type = double;

  explicit CommonProposalWalk(double g_sd = 2.0, bool coupled = true) : g_sd_(g_sd), coupled_(coupled) {
    if (!(g_sd > 0.0)) throw ConfigError("common proposal: g scale must be > 0");
  }

  NoiseShape noise_shape() const { return NoiseShape{2, 2, {}}; }

  static double log_phi(double z) { return -0.5 * z * z; }
  double log_g(double z) const { return -0.5 * (z / g_sd_) * (z / g_sd_); }

  // Proposal W for a chain at x: the shared Z if
  // N(Z - x) g(Y) / (N(Y - x) g(Z)) > U, else the chain's own Y.
  double proposal(double x, const NoiseAtom& atom) const {
    const double z = g_sd_ * atom.normals.at(0);
    const double y = x + atom.normals.at(1);
    if (!coupled_) return y;
    const double log_ratio = log_phi(z - x) + log_g(y) - log_phi(y - x) - log_g(z);
    return log_ratio > std::log(atom.uniforms.at(0)) ? z : y;
  }

  std::vector<double> proposals(const std::vector<double>& chains, const NoiseAtom& atom) const {
    std::vector<double> out;
    out.reserve(chains.size());
    for (double x : chains) out.push_back(proposal(x, atom));
    return out;
  }

  double step(double x, const NoiseAtom& atom) const {
    const double w = proposal(x, atom);
    return log_phi(w) - log_phi(x) >= std::log(atom.uniforms.at(1)) ? w : x;
  }

 private:
  double g_sd_;
  bool coupled_;
};

// Perfect slice sampler as an SRS on the density order x < y iff f(x) <= f(y).
// Atom: uniforms[0] = epsilon, auxiliary stream 0 = the uniforms behind
// W_1 ~ U(0, c), W_j ~ U(0, W_{j-1}) (= Uniform[A(f(W_{j-1}))] for decreasing f).
class SliceSampler {
 public:
  using state_type = double;

  explicit SliceSampler(models::DecreasingDensity d, std::uint64_t w_cap = kRejectionCap) : d_(std::move(d)), cap_(w_cap) {}

  const models::DecreasingDensity& density() const noexcept { return d_; }
  NoiseShape noise_shape() const { return NoiseShape{1, 0, {}}; }

  double w_at(const NoiseAtom& atom, std::uint64_t j, double prev) const {
    return atom.aux_uniform(0, j - 1) * (j == 1 ? d_.c : prev);
  }

  struct Update {
    double value;
    std::uint64_t tau;
  };

  // tau(x) = inf{j : f(W_j) >= epsilon f(x)} and the update W_tau.
  Update update(double x, const NoiseAtom& atom) const {
    const double level = atom.uniforms.at(0) * d_.f(x);
    double w = d_.c;
    for (std::uint64_t j = 1; j <= cap_; ++j) {
      w = w_at(atom, j, w);
      if (d_.f(w) >= level) return {w, j};
    }
    throw CapExceeded("slice: W sequence exceeded " + std::to_string(cap_) + " terms");
  }

  double step(double x, const NoiseAtom& atom) const { return update(x, atom).value; }

  // All chains through one shared W sequence.
  std::vector<double> update_all(const std::vector<double>& chains, const NoiseAtom& atom) const {
    std::vector<double> out;
    out.reserve(chains.size());
    for (double x : chains) out.push_back(step(x, atom));
    return out;
  }

  bool precedes(double a, double b) const { return d_.f(a) <= d_.f(b); }
  double min_state() const { return d_.c; }
  double max_state() const { return 0.0; }

 private:
  models::DecreasingDensity d_;
  std::uint64_t cap_;
};

// Exact draw from the normalized slice density by monotone CFTP between
// x_min = c and x_max = 0.
inline CoalescenceCertificate<double> slice_cftp(const SliceSampler& sampler, std::uint64_t seed,
                                                 std::uint32_t replicate = 0,
                                                 const BackoffSchedule& schedule = BackoffSchedule{}) {
  return cftp_monotone(sampler, KeyedNoise{seed, replicate, sampler.noise_shape()}, schedule);
}

}  // namespace perfect
