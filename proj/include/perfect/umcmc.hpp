#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/noise.hpp"
#include "perfect/stats.hpp"

namespace perfect::umcmc {

// Correctly rounded sum of a multiset of doubles (Shewchuk partials). Two
// orderings of the same terms give the same result bit for bit.
inline double exact_sum(std::span<const double> terms) {
  std::vector<double> partials;
  for (double x : terms) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  // Round the partials (non-overlapping, increasing magnitude) half-even.
  auto n = partials.size();
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

namespace detail {

inline std::size_t inverse_cdf(std::span<const double> w, double total, double u) {
  const double target = u * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last = i;
    acc += w[i];
    if (target < acc) return i;
  }
  return last;
}

inline std::vector<double> row_of(const Eigen::MatrixXd& m, std::size_t i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(static_cast<Eigen::Index>(i), j);
  return r;
}

}  // namespace detail

// Maximal coupling of p and q driven by three uniforms: u0 decides whether
// the pair lands on the overlap min(p, q); u1 and u2 place it.
inline std::pair<std::size_t, std::size_t> maximal_coupling_rows(std::span<const double> p, std::span<const double> q,
                                                                 double u0, double u1, double u2) {
  if (p.size() != q.size()) throw ConfigError("maximal coupling: distributions over different supports");
  const std::size_t n = p.size();
  std::vector<double> overlap(n), rp(n), rq(n);
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    overlap[i] = std::min(p[i], q[i]);
    w += overlap[i];
  }
  if (u0 < w) {
    const std::size_t i = detail::inverse_cdf(overlap, w, u1);
    return {i, i};
  }
  for (std::size_t i = 0; i < n; ++i) {
    rp[i] = std::max(0.0, p[i] - overlap[i]);
    rq[i] = std::max(0.0, q[i] - overlap[i]);
  }
  return {detail::inverse_cdf(rp, 1.0 - w, u1), detail::inverse_cdf(rq, 1.0 - w, u2)};
}

inline std::pair<std::size_t, std::size_t> maximal_coupling_rows(std::span<const double> p, std::span<const double> q,
                                                                 const NoiseAtom& atom) {
  return maximal_coupling_rows(p, q, atom.uniforms.at(0), atom.uniforms.at(1), atom.uniforms.at(2));
}

struct LagConfig {
  long L = 1;
  long k = 0;
  // Keep simulating X at least this far, even after meeting.
  long horizon = 0;
  long cap = 1L << 24;
};

// x[t] = X_t for t <= x_end; y[s] = Y_s for s <= x_end - L. Entries are
// indices into the chain's labels.
struct CoupledPair {
  std::vector<std::size_t> x;
  std::vector<std::size_t> y;
  long tau = 0;
  long L = 1;
  long k = 0;
};

inline long correction_count(long tau, long k, long L) {
  const long num = tau - L - k;
  if (num <= 0) return 0;
  return (num + L - 1) / L;
}

inline NoiseShape coupling_shape() { return NoiseShape{3, 0, {}}; }

// X runs L steps alone, then (X_t, Y_{t-L}) move through the maximal coupling
// of their rows until they meet; from then on Y copies X.
template <typename State>
CoupledPair run_lagged_pair(const FiniteChainSpec<State>& spec, const Distribution& init, const LagConfig& cfg,
                            std::uint64_t seed, std::uint32_t replicate = 0) {
  if (cfg.L < 1) throw ConfigError("lagged pair: L must be >= 1");
  if (cfg.k < 0) throw ConfigError("lagged pair: k must be >= 0");
  perfect::detail::require_distribution(init, spec.size());
  const auto& P = spec.matrix;

  CoupledPair pair;
  pair.L = cfg.L;
  pair.k = cfg.k;
  const auto a0 = noise_at(seed, 0, replicate, coupling_shape());
  pair.x.push_back(detail::inverse_cdf(init, 1.0, a0.uniforms[0]));
  pair.y.push_back(detail::inverse_cdf(init, 1.0, a0.uniforms[1]));

  long met = -1;
  for (long t = 1;; ++t) {
    if (met >= 0 && t > std::max(cfg.horizon, cfg.k)) break;
    if (t > cfg.cap) throw CapExceeded("lagged pair: no meeting within " + std::to_string(cfg.cap) + " steps");
    const auto atom = noise_at(seed, t, replicate, coupling_shape());
    const auto px = detail::row_of(P, pair.x.back());
    if (t <= cfg.L) {
      pair.x.push_back(detail::inverse_cdf(px, 1.0, atom.uniforms[1]));
    } else if (met >= 0) {
      pair.x.push_back(detail::inverse_cdf(px, 1.0, atom.uniforms[1]));
      pair.y.push_back(pair.x.back());
    } else {
      const auto py = detail::row_of(P, pair.y.back());
      const auto [i, j] = maximal_coupling_rows(px, py, atom);
      pair.x.push_back(i);
      pair.y.push_back(j);
    }
    if (met < 0 && t >= cfg.L && pair.x[static_cast<std::size_t>(t)] == pair.y[static_cast<std::size_t>(t - cfg.L)]) {
      met = t;
    }
  }
  pair.tau = met;
  return pair;
}

struct UnbiasedEstimate {
  double value = 0.0;
  long J = 0;
  long k = 0;
  long L = 1;
};

namespace detail {

inline void require_x(const CoupledPair& p, long t) {
  if (t < 0 || static_cast<std::size_t>(t) >= p.x.size())
    throw ConfigError("estimator needs X_" + std::to_string(t) + ", recorded through X_" + std::to_string(p.x.size() - 1));
}
inline void require_y(const CoupledPair& p, long s) {
  if (s < 0 || static_cast<std::size_t>(s) >= p.y.size())
    throw ConfigError("estimator needs Y_" + std::to_string(s) + ", recorded through Y_" + std::to_string(p.y.size() - 1));
}

}  // namespace detail

// H = h(X_k) + sum_{j=1..J} [h(X_{k+jL}) - h(Y_{k+(j-1)L})].
template <typename State, typename H>
UnbiasedEstimate h_estimate(const CoupledPair& pair, const FiniteChainSpec<State>& spec, H&& h) {
  const long J = correction_count(pair.tau, pair.k, pair.L);
  const long k = pair.k, L = pair.L;
  auto hx = [&](long t) { detail::require_x(pair, t); return static_cast<double>(h(spec.labels[pair.x[static_cast<std::size_t>(t)]])); };
  auto hy = [&](long s) { detail::require_y(pair, s); return static_cast<double>(h(spec.labels[pair.y[static_cast<std::size_t>(s)]])); };
  std::vector<double> terms{hx(k)};
  for (long j = 1; j <= J; ++j) {
    terms.push_back(hx(k + j * L));
    terms.push_back(-hy(k + (j - 1) * L));
  }
  return {exact_sum(terms), J, k, L};
}

// H = h(X_{k+JL}) + sum_{j=0..J-1} [h(X_{k+jL}) - h(Y_{k+jL})].
template <typename State, typename H>
UnbiasedEstimate h_estimate_backward(const CoupledPair& pair, const FiniteChainSpec<State>& spec, H&& h) {
  const long J = correction_count(pair.tau, pair.k, pair.L);
  const long k = pair.k, L = pair.L;
  auto hx = [&](long t) { detail::require_x(pair, t); return static_cast<double>(h(spec.labels[pair.x[static_cast<std::size_t>(t)]])); };
  auto hy = [&](long s) { detail::require_y(pair, s); return static_cast<double>(h(spec.labels[pair.y[static_cast<std::size_t>(s)]])); };
  std::vector<double> terms{hx(k + J * L)};
  for (long j = 0; j < J; ++j) {
    terms.push_back(hx(k + j * L));
    terms.push_back(-hy(k + j * L));
  }
  return {exact_sum(terms), J, k, L};
}

// Monte Carlo E[J_{k,L}], an upper bound on d_TV(pi_k, pi).
template <typename State>
stats::MeanSe tv_bound(const FiniteChainSpec<State>& spec, const Distribution& init, long L, long k, std::size_t n_reps,
                       std::uint64_t seed) {
  if (n_reps < 1000) throw ConfigError("tv bound: need at least 1000 replicates");
  std::vector<double> js;
  js.reserve(n_reps);
  for (std::size_t r = 0; r < n_reps; ++r) {
    // J depends on k only through tau, so X need not be run out to k.
    const auto pair = run_lagged_pair(spec, init, LagConfig{L, 0, 0}, seed, static_cast<std::uint32_t>(r));
    js.push_back(static_cast<double>(correction_count(pair.tau, k, L)));
  }
  return stats::mean_se(js);
}

struct ControlVariatePlan {
  long k = 0;
  long L = 1;
  std::vector<int> eta;
  std::vector<double> S;

  // Number of leading j with eta_j = 1.
  long active() const { return static_cast<long>(std::count(eta.begin(), eta.end(), 1)); }
};

// S_j = Pr(J > j) + 0.5 Pr(J = j) and eta_j = 1{S_j > 0.5}, from empirical J.
inline ControlVariatePlan plan_from_counts(std::span<const long> js, long k, long L) {
  if (js.empty()) throw ConfigError("control variate plan: empty pilot");
  const long jmax = *std::max_element(js.begin(), js.end());
  std::vector<double> freq(static_cast<std::size_t>(jmax) + 1, 0.0);
  for (long j : js) freq[static_cast<std::size_t>(j)] += 1.0;
  const double n = static_cast<double>(js.size());
  ControlVariatePlan plan{k, L, {}, {}};
  double above = n;
  for (long j = 0; j <= jmax; ++j) {
    const double eq = freq[static_cast<std::size_t>(j)];
    above -= eq;
    const double s = (above + 0.5 * eq) / n;
    plan.S.push_back(s);
    plan.eta.push_back(s > 0.5 ? 1 : 0);
  }
  return plan;
}

// Pilot on its own key so production replicates never see pilot noise.
inline std::uint64_t pilot_seed(std::uint64_t seed) { return derive_seed(seed, 0x63765f70696c6f74ull, 0); }

template <typename State>
ControlVariatePlan build_cv_plan(const FiniteChainSpec<State>& spec, const Distribution& init, long k, long L,
                                 std::uint64_t seed, std::size_t pilot_n = 10000) {
  std::vector<long> js;
  js.reserve(pilot_n);
  const auto ps = pilot_seed(seed);
  for (std::size_t r = 0; r < pilot_n; ++r) {
    const auto pair = run_lagged_pair(spec, init, LagConfig{L, 0, 0}, ps, static_cast<std::uint32_t>(r));
    js.push_back(correction_count(pair.tau, k, L));
  }
  return plan_from_counts(js, k, L);
}

// Horizon a pair must be simulated to for cv_estimate under this plan.
inline long cv_horizon(const ControlVariatePlan& plan) { return plan.k + plan.active() * plan.L; }

// H - sum_j eta_j Delta_{k,j}, Delta_{k,j} = h(X_{k+jL}) - h(Y_{k+jL}).
template <typename State, typename H>
double cv_estimate(const CoupledPair& pair, const FiniteChainSpec<State>& spec, H&& h, const ControlVariatePlan& plan) {
  if (plan.k != pair.k || plan.L != pair.L) throw ConfigError("control variate plan built for a different (k, L)");
  const long J = correction_count(pair.tau, pair.k, pair.L);
  const long k = pair.k, L = pair.L;
  auto hx = [&](long t) { detail::require_x(pair, t); return static_cast<double>(h(spec.labels[pair.x[static_cast<std::size_t>(t)]])); };
  auto hy = [&](long s) { detail::require_y(pair, s); return static_cast<double>(h(spec.labels[pair.y[static_cast<std::size_t>(s)]])); };
  std::vector<double> terms{hx(k)};
  for (long j = 1; j <= J; ++j) {
    terms.push_back(hx(k + j * L));
    terms.push_back(-hy(k + (j - 1) * L));
  }
  for (std::size_t j = 0; j < plan.eta.size(); ++j) {
    if (!plan.eta[j]) continue;
    const long t = k + static_cast<long>(j) * L;
    terms.push_back(-hx(t));
    terms.push_back(hy(t));
  }
  return exact_sum(terms);
}

}  // namespace perfect::umcmc
