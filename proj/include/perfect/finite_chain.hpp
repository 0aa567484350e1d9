#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perfect/errors.hpp"
#include "perfect/model.hpp"

namespace perfect {

using Distribution = std::vector<double>;

// Explicit transition matrix over an enumerated state space. Row i is the
// law of X_{t+1} given X_t = labels[i].
template <typename State>
struct FiniteChainSpec {
  std::vector<State> labels;
  Eigen::MatrixXd matrix;

  std::size_t size() const noexcept { return labels.size(); }

  std::size_t index_of(const State& s) const {
    const auto it = std::find(labels.begin(), labels.end(), s);
    if (it == labels.end()) throw ConfigError("state " + format_state(s) + " is not a label of this chain");
    return static_cast<std::size_t>(it - labels.begin());
  }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (n == 0 || matrix.rows() != n || matrix.cols() != n) throw ConfigError("transition matrix shape mismatch");
    for (Eigen::Index i = 0; i < n; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!(matrix(i, j) >= 0.0)) throw ConfigError("negative or NaN transition probability");
        sum += matrix(i, j);
      }
      if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("row " + std::to_string(i) + " does not sum to 1");
    }
  }
};

namespace detail {

inline void require_distribution(const Distribution& d, std::size_t n) {
  if (d.size() != n) throw ConfigError("distribution has wrong length");
  double sum = 0.0;
  for (double v : d) {
    if (!(v >= 0.0)) throw ConfigError("distribution has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-10) throw ConfigError("distribution does not sum to 1");
}

inline std::vector<bool> reachable(const Eigen::MatrixXd& m, bool transpose) {
  const auto n = m.rows();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::queue<Eigen::Index> q;
  seen[0] = true;
  q.push(0);
  while (!q.empty()) {
    const auto i = q.front();
    q.pop();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = transpose ? m(j, i) : m(i, j);
      if (w > 0.0 && !seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = true;
        q.push(j);
      }
    }
  }
  return seen;
}

// Period of an irreducible chain: gcd over edges (i -> j) of level(i) + 1 - level(j).
inline long period(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  std::vector<long> level(static_cast<std::size_t>(n), -1);
  std::queue<Eigen::Index> q;
  level[0] = 0;
  q.push(0);
  long g = 0;
  while (!q.empty()) {
    const auto i = q.front();
    q.pop();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (m(i, j) <= 0.0) continue;
      auto& lj = level[static_cast<std::size_t>(j)];
      if (lj < 0) {
        lj = level[static_cast<std::size_t>(i)] + 1;
        q.push(j);
      } else {
        g = std::gcd(g, std::labs(level[static_cast<std::size_t>(i)] + 1 - lj));
      }
    }
  }
  return g;
}

}  // namespace detail

// Exact stationary law and k-step marginals of a finite chain.
template <typename State>
class StationaryOracle {
 public:
  StationaryOracle(FiniteChainSpec<State> spec, Distribution pi) : spec_(std::move(spec)), pi_(std::move(pi)) {}

  const Distribution& pi() const noexcept { return pi_; }
  const FiniteChainSpec<State>& spec() const noexcept { return spec_; }

  double pi_of(const State& s) const { return pi_[spec_.index_of(s)]; }

  // Law of X_k when X_0 ~ init.
  Distribution k_step_marginal(const Distribution& init, long k) const {
    detail::require_distribution(init, spec_.size());
    if (k < 0) throw ConfigError("k must be >= 0");
    Eigen::RowVectorXd v = Eigen::Map<const Eigen::RowVectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
    for (long i = 0; i < k; ++i) v = v * spec_.matrix;
    return Distribution(v.data(), v.data() + v.size());
  }

  double expectation(const auto& h) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < pi_.size(); ++i) acc += pi_[i] * h(spec_.labels[i]);
    return acc;
  }

 private:
  FiniteChainSpec<State> spec_;
  Distribution pi_;
};

// Left fixed vector of the transition matrix. Power iteration to a 1e-12
// L1 residual, cross-checked against a dense linear solve (agreement 1e-10).
template <typename State>
StationaryOracle<State> exact_stationary(const FiniteChainSpec<State>& spec) {
  spec.validate();
  const auto& P = spec.matrix;
  const auto n = P.rows();
  const auto fwd = detail::reachable(P, false);
  const auto bwd = detail::reachable(P, true);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!fwd[static_cast<std::size_t>(i)] || !bwd[static_cast<std::size_t>(i)]) {
      throw ChainPropertyError("chain is reducible: state " + std::to_string(i) +
                               " does not communicate with state 0");
    }
  }
  const long per = detail::period(P);
  if (per != 1) throw ChainPropertyError("chain is periodic with period " + std::to_string(per));

  // Dense route: pi (P - I) = 0 with one equation replaced by sum(pi) = 1.
  Eigen::MatrixXd A = P.transpose() - Eigen::MatrixXd::Identity(n, n);
  A.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  const Eigen::VectorXd dense = A.fullPivLu().solve(b);

  // Power route.
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
  bool converged = false;
  for (int it = 0; it < 2'000'000; ++it) {
    Eigen::RowVectorXd next = v * P;
    next /= next.sum();
    const double residual = (next - v).lpNorm<1>();
    v = next;
    if (residual < 1e-12) {
      converged = true;
      break;
    }
  }

  Distribution pi(static_cast<std::size_t>(n));
  if (converged) {
    const double gap = (v.transpose() - dense).lpNorm<Eigen::Infinity>();
    if (gap > 1e-10) {
      throw ChainPropertyError("power iteration and dense solve disagree by " + format_real(gap));
    }
    for (Eigen::Index i = 0; i < n; ++i) pi[static_cast<std::size_t>(i)] = v(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) pi[static_cast<std::size_t>(i)] = std::max(0.0, dense(i));
    const double s = std::accumulate(pi.begin(), pi.end(), 0.0);
    for (double& x : pi) x /= s;
  }
  return StationaryOracle<State>(spec, std::move(pi));
}

inline double tv_distance(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw ConfigError("distributions over different supports");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return 0.5 * acc;
}

// d_TV(init * P^k, pi).
template <typename State>
double exact_tv_at(const StationaryOracle<State>& oracle, const Distribution& init, long k) {
  return tv_distance(oracle.k_step_marginal(init, k), oracle.pi());
}

template <typename State>
Distribution point_mass(const FiniteChainSpec<State>& spec, const State& s) {
  Distribution d(spec.size(), 0.0);
  d[spec.index_of(s)] = 1.0;
  return d;
}

}  // namespace perfect
