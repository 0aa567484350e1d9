#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/model.hpp"
#include "perfect/noise.hpp"
#include "perfect/philox.hpp"

namespace perfect {

// k~(x|z) = k(z|x) pi(x) / pi(z).
template <typename State>
FiniteChainSpec<State> reverse_kernel(const FiniteChainSpec<State>& spec, const Distribution& pi) {
  if (pi.size() != spec.size()) throw ConfigError("reverse kernel: pi has the wrong length");
  for (double p : pi)
    if (!(p > 0.0)) throw ChainPropertyError("reverse kernel: stationary law has a zero entry");
  const auto n = static_cast<Eigen::Index>(spec.size());
  FiniteChainSpec<State> out{spec.labels, Eigen::MatrixXd::Zero(n, n)};
  for (Eigen::Index z = 0; z < n; ++z)
    for (Eigen::Index x = 0; x < n; ++x)
      out.matrix(z, x) = spec.matrix(x, z) * pi[static_cast<std::size_t>(x)] / pi[static_cast<std::size_t>(z)];
  // Rows sum to 1 up to the accuracy of pi; absorb that rounding.
  for (Eigen::Index z = 0; z < n; ++z) {
    const double s = out.matrix.row(z).sum();
    if (std::abs(s - 1.0) > 1e-8) throw ChainPropertyError("reverse kernel: pi is not stationary for this kernel");
    out.matrix.row(z) /= s;
  }
  out.validate();
  return out;
}

template <typename State>
FiniteChainSpec<State> reverse_kernel(const FiniteChainSpec<State>& spec) {
  return reverse_kernel(spec, exact_stationary(spec).pi());
}

// Law of xi given phi(from, xi) = to, as (atom, probability) pairs.
template <DiscreteNoiseModel M>
std::vector<std::pair<NoiseAtom, double>> conditioned_atoms(const M& model, const typename M::state_type& from,
                                                            const typename M::state_type& to) {
  std::vector<std::pair<NoiseAtom, double>> out;
  double mass = 0.0;
  for (auto& [atom, w] : model.atom_support()) {
    if (w > 0.0 && model.step(from, atom) == to) {
      mass += w;
      out.emplace_back(atom, w);
    }
  }
  if (out.empty()) throw ConfigError("conditioned noise: transition " + format_state(from) + " -> " +
                                     format_state(to) + " has probability zero");
  for (auto& entry : out) entry.second /= mass;
  return out;
}

namespace detail {

// Index i with cdf(i-1) < u <= cdf(i) over the weights.
template <typename Weights>
std::size_t inverse_cdf_index(const Weights& w, std::size_t n, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w(i) <= 0.0) continue;
    last = i;
    acc += w(i);
    if (u <= acc) return i;
  }
  return last;  // rounding in the tail of the cdf
}

}  // namespace detail

template <typename State>
struct FillOutcome {
  bool accepted = false;
  State value{};         // X_0 from the reversed run
  State start{};         // Z = X_T
  std::vector<State> path;  // X_0, X_1, ..., X_T
};

template <typename State>
struct FillDraw {
  State value{};
  int rejections = 0;
  std::int64_t T = 0;  // horizon of the accepted attempt
};

template <typename M>
concept FillModel = FiniteModel<M> && OrderedModel<M> && DiscreteNoiseModel<M> && requires(const M& m) {
  { m.transition_spec() };
};

// Fill's interruptible algorithm on a finite monotone chain. Z ~ P0 (uniform
// over states), reversed run Z = X_T -> ... -> X_0, then the extremal paths
// are driven forward by atoms drawn from the law of xi_t given X_{t-1} -> X_t.
// X_0 is accepted iff they meet by time T.
template <FillModel M>
class FillSampler {
 public:
  using State = typename M::state_type;

  explicit FillSampler(M model) : model_(std::move(model)), spec_(model_.transition_spec()) {
    reversed_ = reverse_kernel(spec_);
  }

  const FiniteChainSpec<State>& reversed() const noexcept { return reversed_; }

  // One (Z, T) attempt keyed by (seed, replicate).
  FillOutcome<State> attempt(std::int64_t T, std::uint64_t seed, std::uint32_t replicate = 0) const {
    if (T < 1) throw ConfigError("Fill: T must be >= 1");
    const std::size_t n = spec_.size();
    FillOutcome<State> out;
    const double uz = keyed_uniform(NoiseKey{seed, 0, replicate}, slot::kAuxBase, 0);
    std::size_t idx = std::min(static_cast<std::size_t>(uz * static_cast<double>(n)), n - 1);
    out.start = spec_.labels[idx];
    std::vector<std::size_t> path(static_cast<std::size_t>(T) + 1);
    path[static_cast<std::size_t>(T)] = idx;
    for (std::int64_t t = T; t >= 1; --t) {
      const double u = keyed_uniform(NoiseKey{seed, t, replicate}, slot::kAuxBase, 1);
      const auto row = static_cast<Eigen::Index>(idx);
      idx = detail::inverse_cdf_index([&](std::size_t j) { return reversed_.matrix(row, static_cast<Eigen::Index>(j)); },
                                      n, u);
      path[static_cast<std::size_t>(t - 1)] = idx;
    }
    for (auto i : path) out.path.push_back(spec_.labels[i]);
    out.value = out.path.front();

    State lo = model_.min_state(), hi = model_.max_state();
    for (std::int64_t t = 1; t <= T; ++t) {
      const auto& from = out.path[static_cast<std::size_t>(t - 1)];
      const auto& to = out.path[static_cast<std::size_t>(t)];
      const auto law = conditioned_atoms(model_, from, to);
      const double u = keyed_uniform(NoiseKey{seed, t, replicate}, slot::kAuxBase, 2);
      const auto k = detail::inverse_cdf_index([&](std::size_t j) { return law[j].second; }, law.size(), u);
      lo = model_.step(lo, law[k].first);
      hi = model_.step(hi, law[k].first);
    }
    out.accepted = lo == hi;
    return out;
  }

  // Restart with a fresh Z and doubled T until acceptance.
  FillDraw<State> draw(std::uint64_t seed, std::uint32_t replicate = 0, std::int64_t T0 = 1,
                       std::int64_t t_cap = kFillDefaultCap) const {
    std::int64_t T = T0;
    for (int r = 0; T <= t_cap; ++r, T *= 2) {
      const auto o = attempt(T, derive_seed(seed, static_cast<std::uint64_t>(r)), replicate);
      if (o.accepted) return FillDraw<State>{o.value, r, T};
    }
    throw CapExceeded("Fill: no acceptance up to T=" + std::to_string(t_cap));
  }

  static constexpr std::int64_t kFillDefaultCap = std::int64_t{1} << 20;

 private:
  M model_;
  FiniteChainSpec<State> spec_;
  FiniteChainSpec<State> reversed_;
};

// Single attempt with horizon T: the accepted X_0 or nothing.
template <FillModel M>
std::optional<typename M::state_type> fill_sample(const M& model, std::int64_t T, std::uint64_t seed,
                                                  std::uint32_t replicate = 0) {
  const auto o = FillSampler<M>(model).attempt(T, seed, replicate);
  if (o.accepted) return o.value;
  return std::nullopt;
}

// Bimodal target pi(x,y) ~ exp(-(8x^2y^2 + x^2 + y^2 - 4xy - 8x - 8y)/2)
// under the two-step Gibbs sampler, with each step written as
// new = m(other) + noise * s(other).
namespace gibbs {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Deviates {
  double first = 0.0;   // u (forward) or v (reverse): drives the x update
  double second = 0.0;  // w (forward) or z (reverse): drives the y update
};

inline double cond_mean(double other) { return (2.0 * other + 4.0) / (8.0 * other * other + 1.0); }
inline double cond_sd(double other) { return 1.0 / std::sqrt(8.0 * other * other + 1.0); }

// x_{t+1} = m(y_t) + u s(y_t), then y_{t+1} = m(x_{t+1}) + w s(x_{t+1}).
inline Point forward_step(const Point& p, double u, double w) {
  const double x = cond_mean(p.y) + u * cond_sd(p.y);
  const double y = cond_mean(x) + w * cond_sd(x);
  return {x, y};
}

// Updates in reverse order: y_t = m(x_{t+1}) + z s(x_{t+1}), then
// x_t = m(y_t) + v s(y_t).
inline Point reverse_step(const Point& later, double v, double z) {
  const double y = cond_mean(later.x) + z * cond_sd(later.x);
  const double x = cond_mean(y) + v * cond_sd(y);
  return {x, y};
}

// The (u_t, w_t) that carry path[t-1] to path[t] under forward_step.
inline std::vector<Deviates> recover_forward_noise(const std::vector<Point>& path) {
  std::vector<Deviates> out;
  for (std::size_t t = 1; t < path.size(); ++t) {
    const auto& a = path[t - 1];
    const auto& b = path[t];
    out.push_back({(b.x - cond_mean(a.y)) / cond_sd(a.y), (b.y - cond_mean(b.x)) / cond_sd(b.x)});
  }
  return out;
}

// The (v, z) that carry `later` back to `earlier` under reverse_step.
inline Deviates recover_reverse_noise(const Point& later, const Point& earlier) {
  return {(earlier.x - cond_mean(earlier.y)) / cond_sd(earlier.y),
          (earlier.y - cond_mean(later.x)) / cond_sd(later.x)};
}

inline std::vector<Point> forward_path(const Point& start, const std::vector<Deviates>& noise) {
  std::vector<Point> path{start};
  for (const auto& d : noise) path.push_back(forward_step(path.back(), d.first, d.second));
  return path;
}

inline double log_density(const Point& p) {
  const double x = p.x, y = p.y;
  return -0.5 * (8 * x * x * y * y + x * x + y * y - 4 * x * y - 8 * x - 8 * y);
}

// log of the unnormalized x-marginal, integrating the Gaussian y-factor out.
inline double log_marginal_x(double x) {
  const double a = 8 * x * x + 1;
  const double b = 4 * x + 8;
  return -0.5 * std::log(a) + b * b / (8 * a) - 0.5 * (x * x - 8 * x);
}

// Tabulated x-marginal CDF on [lo, hi] (trapezoid rule, linear interpolation).
class MarginalX {
 public:
  explicit MarginalX(double lo = -8.0, double hi = 14.0, std::size_t cells = 200000)
      : lo_(lo), hi_(hi), cdf_(cells + 1, 0.0) {
    const double h = (hi - lo) / static_cast<double>(cells);
    double mx = -1e300;
    std::vector<double> ld(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) {
      ld[i] = log_marginal_x(lo + h * static_cast<double>(i));
      mx = std::max(mx, ld[i]);
    }
    for (std::size_t i = 1; i <= cells; ++i) cdf_[i] = cdf_[i - 1] + 0.5 * (std::exp(ld[i - 1] - mx) + std::exp(ld[i] - mx));
    for (double& c : cdf_) c /= cdf_.back();
  }

  double cdf(double x) const {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    const double pos = (x - lo_) / (hi_ - lo_) * static_cast<double>(cdf_.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), cdf_.size() - 2);
    const double f = pos - static_cast<double>(i);
    return cdf_[i] + f * (cdf_[i + 1] - cdf_[i]);
  }

  // Inverse by bisection on the table.
  double quantile(double u) const {
    std::size_t a = 0, b = cdf_.size() - 1;
    while (b - a > 1) {
      const std::size_t mid = (a + b) / 2;
      (cdf_[mid] < u ? a : b) = mid;
    }
    const double span = cdf_[b] - cdf_[a];
    const double f = span > 0 ? (u - cdf_[a]) / span : 0.0;
    const double h = (hi_ - lo_) / static_cast<double>(cdf_.size() - 1);
    return lo_ + h * (static_cast<double>(a) + f);
  }

 private:
  double lo_, hi_;
  std::vector<double> cdf_;
};

}  // namespace gibbs

}  // namespace perfect
