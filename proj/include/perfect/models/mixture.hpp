#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "perfect/cftp.hpp"
#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/model.hpp"
#include "perfect/noise.hpp"

namespace perfect::models {

// Two-component mixture alpha*N(mu0,1) + (1-alpha)*N(mu1,1) with only the
// weight alpha unknown (uniform prior). The sampler only ever needs the
// per-point density ratios f0(d_i)/f1(d_i).
struct MixtureData {
  std::vector<double> points;
  double mu0 = 0.0;
  double mu1 = 3.0;

  std::size_t n() const noexcept { return points.size(); }

  double f0(double d) const { return normal_pdf(d - mu0); }
  double f1(double d) const { return normal_pdf(d - mu1); }

  // f0(d)/f1(d) without underflow.
  double ratio(double d) const { return std::exp(-0.5 * (d - mu0) * (d - mu0) + 0.5 * (d - mu1) * (d - mu1)); }

  // log prod_i (alpha f0(d_i) + (1-alpha) f1(d_i)), the log posterior up to a constant.
  double log_posterior(double alpha) const {
    double acc = 0.0;
    for (double d : points) acc += std::log(alpha * f0(d) + (1.0 - alpha) * f1(d));
    return acc;
  }

  static double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846); }
};

inline constexpr std::uint64_t kMixtureFixtureSeed = 19960701;
inline constexpr double kMixtureFixtureAlpha = 0.7;

// n points with z_i ~ Bernoulli(1 - alpha) choosing the component.
inline MixtureData simulate_mixture_data(std::uint64_t seed, std::size_t n, double alpha, double mu0 = 0.0,
                                         double mu1 = 3.0) {
  MixtureData data{{}, mu0, mu1};
  const NoiseShape shape{1, 1, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto atom = noise_at(seed, static_cast<std::int64_t>(i), 0, shape);
    data.points.push_back((atom.uniforms[0] < alpha ? mu0 : mu1) + atom.normals[0]);
  }
  return data;
}

// The shipped n = 10 dataset (tests/data/mixture_n10.txt holds the same values).
inline MixtureData default_mixture_data() {
  return simulate_mixture_data(kMixtureFixtureSeed, 10, kMixtureFixtureAlpha);
}

// alpha = (w_1 + ... + w_{n+1-l}) / (w_1 + ... + w_{n+2}) ~ Beta(n+1-l, l+1)
// for i.i.d. Exponential(1) weights w.
inline double mixture_alpha_draw(std::size_t l, std::span<const double> w) {
  if (w.size() < 2 || l > w.size() - 2) throw ConfigError("mixture alpha draw: need n+2 weights and l <= n");
  const std::size_t n = w.size() - 2;
  const double head = std::accumulate(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n + 1 - l), 0.0);
  const double tail = std::accumulate(w.begin() + static_cast<std::ptrdiff_t>(n + 1 - l), w.end(), 0.0);
  return head / (head + tail);
}

// l_{t+1} = sum_i 1{u_i <= [1 + (S/S_l - 1)^{-1} f0(d_i)/f1(d_i)]^{-1}} where
// S sums all n+2 weights and S_l the first n+1-l. Increasing in l_t.
inline std::size_t mixture_l_step(const MixtureData& data, std::size_t l, std::span<const double> u,
                                  std::span<const double> w) {
  const std::size_t n = data.n();
  if (l > n || u.size() != n || w.size() != n + 2) throw ConfigError("mixture l-step: bad state or atom shape");
  const double s_l = std::accumulate(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n + 1 - l), 0.0);
  const double rest = std::accumulate(w.begin() + static_cast<std::ptrdiff_t>(n + 1 - l), w.end(), 0.0);
  // (S/S_l - 1)^{-1} = S_l / (S - S_l); summing the complement avoids cancellation.
  const double odds = s_l / rest;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + odds * data.ratio(data.points[i]));
    next += u[i] <= p ? 1 : 0;
  }
  return next;
}

// Monotone chain on l = sum z_i in {0..n}. Atom: n uniforms for the
// indicators followed by n+2 uniforms turned into Exponential(1) weights.
class MixtureLatentChain {
 public:
  using state_type = int;

  explicit MixtureLatentChain(MixtureData data) : data_(std::move(data)) {
    if (data_.points.empty()) throw ConfigError("mixture: empty dataset");
  }

  const MixtureData& data() const noexcept { return data_; }
  int n() const noexcept { return static_cast<int>(data_.n()); }

  NoiseShape noise_shape() const { return NoiseShape{2 * data_.n() + 2, 0, {}}; }

  std::vector<int> states() const {
    std::vector<int> out(data_.n() + 1);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }

  static std::vector<double> exponentials(std::span<const double> uniforms) {
    std::vector<double> w(uniforms.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = -std::log(uniforms[j]);
    return w;
  }

  int step(int l, const NoiseAtom& atom) const {
    const std::size_t n = data_.n();
    const std::span<const double> all(atom.uniforms);
    const auto w = exponentials(all.subspan(n, n + 2));
    return static_cast<int>(mixture_l_step(data_, static_cast<std::size_t>(l), all.subspan(0, n), w));
  }

  bool precedes(int a, int b) const noexcept { return a <= b; }
  int min_state() const noexcept { return 0; }
  int max_state() const noexcept { return n(); }

  // alpha | l from a fresh atom's weights.
  double alpha_given_l(int l, const NoiseAtom& atom) const {
    const std::size_t n = data_.n();
    const auto w = exponentials(std::span<const double>(atom.uniforms).subspan(n, n + 2));
    return mixture_alpha_draw(static_cast<std::size_t>(l), w);
  }

  // P(l' | l) = int Beta(alpha; n+1-l, l+1) * PoissonBinomial(l'; p(alpha)) d alpha,
  // by composite Gauss-Legendre quadrature.
  FiniteChainSpec<int> transition_spec() const {
    const std::size_t n = data_.n();
    FiniteChainSpec<int> spec{states(), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + 1),
                                                             static_cast<Eigen::Index>(n + 1))};
    constexpr int kPanels = 64;
    for (std::size_t l = 0; l <= n; ++l) {
      const double a = static_cast<double>(n + 1 - l), b = static_cast<double>(l + 1);
      for (int panel = 0; panel < kPanels; ++panel) {
        const double lo = static_cast<double>(panel) / kPanels, hi = static_cast<double>(panel + 1) / kPanels;
        const auto& nodes = boost::math::quadrature::gauss<double, 20>::abscissa();
        const auto& weights = boost::math::quadrature::gauss<double, 20>::weights();
        auto visit = [&](double alpha, double weight) {
          const double dens = std::exp((a - 1) * std::log(alpha) + (b - 1) * std::log1p(-alpha) -
                                       std::log(boost::math::beta(a, b)));
          const auto pmf = poisson_binomial(alpha);
          for (std::size_t k = 0; k <= n; ++k)
            spec.matrix(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) += weight * dens * pmf[k];
        };
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k] == 0.0) {
            visit(mid, half * weights[k]);
          } else {
            visit(mid + half * nodes[k], half * weights[k]);
            visit(mid - half * nodes[k], half * weights[k]);
          }
        }
      }
      const double row = spec.matrix.row(static_cast<Eigen::Index>(l)).sum();
      spec.matrix.row(static_cast<Eigen::Index>(l)) /= row;
    }
    return spec;
  }

 private:
  std::vector<double> poisson_binomial(double alpha) const {
    std::vector<double> pmf{1.0};
    for (double d : data_.points) {
      const double p = (1 - alpha) * data_.f1(d) / (alpha * data_.f0(d) + (1 - alpha) * data_.f1(d));
      std::vector<double> next(pmf.size() + 1, 0.0);
      for (std::size_t k = 0; k < pmf.size(); ++k) {
        next[k] += pmf[k] * (1 - p);
        next[k + 1] += pmf[k] * p;
      }
      pmf = std::move(next);
    }
    return pmf;
  }

  MixtureData data_;
};

// Exact posterior draw of alpha: monotone CFTP on l over xi_{-T..-1}, then
// alpha | l from the atom at time 0.
inline double mixture_perfect_alpha(const MixtureLatentChain& chain, std::uint64_t seed, std::uint32_t replicate = 0) {
  const KeyedNoise noise{seed, replicate, chain.noise_shape()};
  const int l = cftp_monotone(chain, noise).draw;
  return chain.alpha_given_l(l, noise(0));
}

// Normalized posterior CDF of alpha on an equally spaced grid of `points`
// midpoints over (0,1), linearly interpolated.
class MixturePosteriorGrid {
 public:
  MixturePosteriorGrid(const MixtureData& data, std::size_t points) : cdf_(points + 1, 0.0) {
    std::vector<double> logd(points);
    double mx = -1e300;
    for (std::size_t i = 0; i < points; ++i) {
      logd[i] = data.log_posterior((static_cast<double>(i) + 0.5) / static_cast<double>(points));
      mx = std::max(mx, logd[i]);
    }
    for (std::size_t i = 0; i < points; ++i) cdf_[i + 1] = cdf_[i] + std::exp(logd[i] - mx);
    for (double& c : cdf_) c /= cdf_.back();
  }

  double cdf(double alpha) const {
    if (alpha <= 0.0) return 0.0;
    if (alpha >= 1.0) return 1.0;
    const double pos = alpha * static_cast<double>(cdf_.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return cdf_[i] + frac * (cdf_[std::min(i + 1, cdf_.size() - 1)] - cdf_[i]);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace perfect::models
