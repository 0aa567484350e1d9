#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/model.hpp"

namespace perfect::models {

using Spins = std::vector<std::int8_t>;

// Square L x L Ising lattice, free boundary, no external field:
// q(s | beta) = exp(beta * sum_{<ij>} s_i s_j).
class Ising2D {
 public:
  using state_type = Spins;

  Ising2D(int side, double beta) : side_(side), beta_(beta) {
    if (side < 1) throw ConfigError("ising: side length must be >= 1");
    if (!std::isfinite(beta)) throw ConfigError("ising: beta must be finite");
  }

  int side() const noexcept { return side_; }
  double beta() const noexcept { return beta_; }
  std::size_t sites() const noexcept { return static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_); }

  NoiseShape noise_shape() const { return NoiseShape{sites(), 0, {}}; }

  int neighbor_sum(const Spins& s, std::size_t site) const {
    const int r = static_cast<int>(site) / side_, c = static_cast<int>(site) % side_;
    int sum = 0;
    if (r > 0) sum += s[site - static_cast<std::size_t>(side_)];
    if (r + 1 < side_) sum += s[site + static_cast<std::size_t>(side_)];
    if (c > 0) sum += s[site - 1];
    if (c + 1 < side_) sum += s[site + 1];
    return sum;
  }

  // P(s_i = +1 | neighbors) for the heat-bath update.
  double up_probability(int neighbor_sum) const { return 1.0 / (1.0 + std::exp(-2.0 * beta_ * neighbor_sum)); }

  // One raster-scan heat-bath sweep; site i becomes +1 iff u_i <= P(+1 | current neighbors).
  Spins step(Spins s, const NoiseAtom& atom) const {
    if (s.size() != sites() || atom.uniforms.size() != sites()) throw ConfigError("ising: config/atom size mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = atom.uniforms[i] <= up_probability(neighbor_sum(s, i)) ? 1 : -1;
    return s;
  }

  bool precedes(const Spins& a, const Spins& b) const {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] > b[i]) return false;
    return true;
  }
  Spins min_state() const { return Spins(sites(), -1); }
  Spins max_state() const { return Spins(sites(), 1); }

  static Spins decode(std::uint32_t bits, std::size_t sites) {
    Spins s(sites);
    for (std::size_t i = 0; i < sites; ++i) s[i] = (bits >> i) & 1u ? 1 : -1;
    return s;
  }

  std::vector<Spins> states() const {
    if (sites() > 16) throw OracleUnavailable("ising: state enumeration limited to 2^16 configurations");
    std::vector<Spins> out;
    for (std::uint32_t b = 0; b < (1u << sites()); ++b) out.push_back(decode(b, sites()));
    std::sort(out.begin(), out.end());
    return out;
  }

  int pair_sum(const Spins& s) const {
    int acc = 0;
    for (int r = 0; r < side_; ++r)
      for (int c = 0; c < side_; ++c) {
        const auto i = static_cast<std::size_t>(r * side_ + c);
        if (c + 1 < side_) acc += s[i] * s[i + 1];
        if (r + 1 < side_) acc += s[i] * s[i + static_cast<std::size_t>(side_)];
      }
    return acc;
  }

  double log_q(const Spins& s) const { return beta_ * pair_sum(s); }

  static double abs_magnetization(const Spins& s) {
    int m = 0;
    for (auto v : s) m += v;
    return std::abs(static_cast<double>(m)) / static_cast<double>(s.size());
  }

  // Exact sweep kernel by branching on every site decision (small lattices only).
  FiniteChainSpec<Spins> transition_spec() const {
    if (sites() > 9) throw OracleUnavailable("ising: exact sweep kernel limited to L <= 3");
    const auto labels = states();
    FiniteChainSpec<Spins> spec{labels, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                                              static_cast<Eigen::Index>(labels.size()))};
    for (std::size_t row = 0; row < labels.size(); ++row) branch(spec, row, labels[row], 0, 1.0);
    return spec;
  }

 private:
  void branch(FiniteChainSpec<Spins>& spec, std::size_t row, Spins s, std::size_t site, double prob) const {
    if (site == s.size()) {
      spec.matrix(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(spec.index_of(s))) += prob;
      return;
    }
    const double up = up_probability(neighbor_sum(s, site));
    s[site] = 1;
    if (up > 0.0) branch(spec, row, s, site + 1, prob * up);
    s[site] = -1;
    if (up < 1.0) branch(spec, row, s, site + 1, prob * (1.0 - up));
  }

  int side_;
  double beta_;
};

struct IsingMoments {
  double log_partition = 0.0;  // log Z(beta)
  double partition = 0.0;      // Z(beta)
  double mean_abs_magnetization = 0.0;
  std::vector<std::vector<double>> pair_expectations;  // E[s_i s_j]
};

// Exhaustive enumeration over all 2^{L^2} configurations (L <= 4).
inline IsingMoments ising_exact_moments(int side, double beta) {
  if (side < 1 || side * side > 16) throw OracleUnavailable("ising: exact moments need 2^{L^2} <= 2^16");
  const Ising2D model(side, beta);
  const std::size_t n = model.sites();
  // Shift by the largest exponent for stability; pair_sum <= number of edges.
  const double edges = 2.0 * side * (side - 1);
  const double shift = std::abs(beta) * edges;
  IsingMoments out;
  out.pair_expectations.assign(n, std::vector<double>(n, 0.0));
  double z = 0.0, abs_m = 0.0;
  for (std::uint32_t b = 0; b < (1u << n); ++b) {
    const Spins s = Ising2D::decode(b, n);
    const double w = std::exp(model.log_q(s) - shift);
    z += w;
    abs_m += w * Ising2D::abs_magnetization(s);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out.pair_expectations[i][j] += w * s[i] * s[j];
  }
  out.log_partition = std::log(z) + shift;
  out.partition = std::exp(out.log_partition);
  out.mean_abs_magnetization = abs_m / z;
  for (auto& row : out.pair_expectations)
    for (double& v : row) v /= z;
  return out;
}

// Number of configurations per value of the pair sum; log Z(beta) for any
// beta follows without re-enumerating.
class IsingDensityOfStates {
 public:
  explicit IsingDensityOfStates(int side) {
    if (side < 1 || side * side > 16) throw OracleUnavailable("ising: density of states needs 2^{L^2} <= 2^16");
    const Ising2D model(side, 0.0);
    for (std::uint32_t b = 0; b < (1u << model.sites()); ++b) counts_[model.pair_sum(Ising2D::decode(b, model.sites()))] += 1.0;
  }

  double log_partition(double beta) const {
    double mx = -1e300;
    for (const auto& [s, c] : counts_) mx = std::max(mx, beta * s);
    double acc = 0.0;
    for (const auto& [s, c] : counts_) acc += c * std::exp(beta * s - mx);
    return std::log(acc) + mx;
  }

  const std::map<int, double>& counts() const noexcept { return counts_; }

 private:
  std::map<int, double> counts_;
};

}  // namespace perfect::models
