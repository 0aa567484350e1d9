#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "perfect/cftp.hpp"
#include "perfect/errors.hpp"
#include "perfect/models/ising.hpp"
#include "perfect/noise.hpp"

namespace perfect::moller {

inline constexpr int kSamplerRetries = 5;

// Fold t back into (lo, hi) by mirroring at the ends. A symmetric random
// walk stays symmetric after folding.
inline double reflect_into(double t, double lo, double hi) {
  const double w = hi - lo;
  double r = std::fmod(t - lo, 2.0 * w);
  if (r < 0.0) r += 2.0 * w;
  return r <= w ? lo + r : hi - (r - w);
}

// Posterior for the Ising coupling beta given one observed lattice:
// uniform prior on (lo, hi), q(y | beta) = exp(beta * S(y)) with S the
// nearest-neighbour pair sum. Deliberately has no access to Z(beta).
class IsingPosteriorTarget {
 public:
  using state_type = models::Spins;

  IsingPosteriorTarget(int side, models::Spins data, double proposal_sd = 0.05, double lo = 0.0, double hi = 1.0)
      : side_(side), data_(std::move(data)), sd_(proposal_sd), lo_(lo), hi_(hi) {
    if (data_.size() != static_cast<std::size_t>(side) * static_cast<std::size_t>(side))
      throw ConfigError("ising posterior: data size does not match the lattice");
    if (!(proposal_sd > 0.0)) throw ConfigError("ising posterior: proposal scale must be > 0");
    if (!(lo < hi)) throw ConfigError("ising posterior: prior support must satisfy lo < hi");
    data_stat_ = models::Ising2D(side, 0.0).pair_sum(data_);
  }

  int side() const noexcept { return side_; }
  const models::Spins& data() const noexcept { return data_; }
  int data_stat() const noexcept { return data_stat_; }
  double proposal_sd() const noexcept { return sd_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

  double log_prior(double theta) const {
    return theta > lo_ && theta < hi_ ? -std::log(hi_ - lo_) : -std::numeric_limits<double>::infinity();
  }
  double log_q(const models::Spins& x, double theta) const { return theta * models::Ising2D(side_, 0.0).pair_sum(x); }
  double log_q_data(double theta) const { return theta * data_stat_; }

  double propose(double theta, double z) const { return reflect_into(theta + sd_ * z, lo_, hi_); }

 private:
  int side_;
  models::Spins data_;
  int data_stat_ = 0;
  double sd_, lo_, hi_;
};

// Exact draws from q(. | beta) / Z(beta) by monotone CFTP on the heat bath.
class IsingPerfectSampler {
 public:
  explicit IsingPerfectSampler(int side, BackoffSchedule schedule = BackoffSchedule{}) : side_(side), schedule_(schedule) {}

  models::Spins operator()(double beta, std::uint64_t seed, std::uint32_t replicate) const {
    const models::Ising2D m(side_, beta);
    return cftp_monotone(m, KeyedNoise{seed, replicate, m.noise_shape()}, schedule_).draw;
  }

 private:
  int side_;
  BackoffSchedule schedule_;
};

// log of [p(t') q(y|t') q(x|t)] / [p(t) q(y|t) q(x'|t')].
template <typename Target>
double log_acceptance(const Target& target, double theta, const typename Target::state_type& x, double theta_new,
                      const typename Target::state_type& x_new) {
  const double num = target.log_prior(theta_new) + target.log_q_data(theta_new) + target.log_q(x, theta);
  const double den = target.log_prior(theta) + target.log_q_data(theta) + target.log_q(x_new, theta_new);
  if (num == -std::numeric_limits<double>::infinity()) return num;
  return num - den;
}

template <typename Target>
struct MollerState {
  double theta = 0.0;
  typename Target::state_type x;
};

struct StepResult {
  bool accepted = false;
  int sampler_retries = 0;
};

inline NoiseShape step_shape() { return NoiseShape{1, 1, {}}; }

// The auxiliary draw for step t, attempt a, lives on its own derived key.
inline std::uint64_t sampler_seed(std::uint64_t seed, std::int64_t t, int attempt) {
  return derive_seed(seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(attempt) + 1);
}

template <typename Target, typename Sampler>
typename Target::state_type perfect_auxiliary(const Sampler& sampler, double theta, std::uint64_t seed, std::int64_t t,
                                              std::uint32_t replicate, int* retries = nullptr) {
  std::string last;
  for (int a = 0; a < kSamplerRetries; ++a) {
    try {
      auto x = sampler(theta, sampler_seed(seed, t, a), replicate);
      if (retries) *retries = a;
      return x;
    } catch (const CapExceeded& e) {
      last = e.what();
    }
  }
  throw CapExceeded("moller: perfect sampler failed " + std::to_string(kSamplerRetries) + " times at step " +
                    std::to_string(t) + " (theta=" + format_real(theta) + "): " + last);
}

// One auxiliary-variable M-H step; the proposal x' is an exact draw at theta'.
template <typename Target, typename Sampler>
StepResult moller_step(const Target& target, const Sampler& sampler, MollerState<Target>& state, std::uint64_t seed,
                       std::int64_t t, std::uint32_t replicate = 0) {
  const auto atom = noise_at(seed, t, replicate, step_shape());
  const double theta_new = target.propose(state.theta, atom.normals[0]);
  StepResult out;
  auto x_new = perfect_auxiliary<Target>(sampler, theta_new, seed, t, replicate, &out.sampler_retries);
  if (std::log(atom.uniforms[0]) < log_acceptance(target, state.theta, state.x, theta_new, x_new)) {
    state.theta = theta_new;
    state.x = std::move(x_new);
    out.accepted = true;
  }
  return out;
}

struct ChainRun {
  std::vector<double> thetas;
  std::vector<std::uint32_t> accepts;  // accepted steps in each recorded window
  std::uint64_t accepted = 0;
  std::uint64_t steps = 0;

  double acceptance_rate() const { return steps ? static_cast<double>(accepted) / static_cast<double>(steps) : 0.0; }
};

// n recorded values of theta, one every `thin` steps. The chain starts at
// theta0 with an exact auxiliary draw at theta0 (step index 0).
template <typename Target, typename Sampler>
ChainRun run_moller(const Target& target, const Sampler& sampler, double theta0, std::size_t n, std::uint64_t seed,
                    std::uint32_t replicate = 0, std::size_t thin = 1) {
  if (thin < 1) throw ConfigError("moller: thinning must be >= 1");
  if (target.log_prior(theta0) == -std::numeric_limits<double>::infinity())
    throw ConfigError("moller: initial theta outside the prior support");
  MollerState<Target> state{theta0, perfect_auxiliary<Target>(sampler, theta0, seed, 0, replicate)};
  ChainRun run;
  run.thetas.reserve(n);
  std::int64_t t = 1;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t window = 0;
    for (std::size_t s = 0; s < thin; ++s, ++t) window += moller_step(target, sampler, state, seed, t, replicate).accepted;
    run.accepted += window;
    run.steps += thin;
    run.accepts.push_back(window);
    run.thetas.push_back(state.theta);
  }
  return run;
}

// C_theta / C_theta' from an exact partition-function oracle.
inline double constant_ratio(double theta, double theta_new, const models::IsingDensityOfStates& oracle) {
  return std::exp(oracle.log_partition(theta) - oracle.log_partition(theta_new));
}

// The classical M-H ratio with the normalizing constants supplied by the oracle.
inline double naive_ratio(const IsingPosteriorTarget& target, double theta, double theta_new,
                          const models::IsingDensityOfStates& oracle) {
  const double lp = target.log_prior(theta_new) + target.log_q_data(theta_new) - target.log_prior(theta) -
                    target.log_q_data(theta) + oracle.log_partition(theta) - oracle.log_partition(theta_new);
  return std::exp(lp);
}

// Plain M-H on theta using the exact ratio; same proposal and step atoms.
inline ChainRun run_naive_mh(const IsingPosteriorTarget& target, const models::IsingDensityOfStates& oracle,
                             double theta0, std::size_t n, std::uint64_t seed, std::uint32_t replicate = 0,
                             std::size_t thin = 1) {
  if (thin < 1) throw ConfigError("naive MH: thinning must be >= 1");
  ChainRun run;
  run.thetas.reserve(n);
  double theta = theta0;
  std::int64_t t = 1;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t window = 0;
    for (std::size_t s = 0; s < thin; ++s, ++t) {
      const auto atom = noise_at(seed, t, replicate, step_shape());
      const double prop = target.propose(theta, atom.normals[0]);
      if (atom.uniforms[0] < naive_ratio(target, theta, prop, oracle)) {
        theta = prop;
        ++window;
      }
    }
    run.accepted += window;
    run.steps += thin;
    run.accepts.push_back(window);
    run.thetas.push_back(theta);
  }
  return run;
}

// Exact posterior of theta on a grid of cell midpoints over (lo, hi).
class GridPosterior {
 public:
  GridPosterior(const IsingPosteriorTarget& target, const models::IsingDensityOfStates& oracle, std::size_t points)
      : lo_(target.lo()), hi_(target.hi()), mass_(points) {
    if (points < 2) throw ConfigError("grid posterior: need at least 2 points");
    const double h = (hi_ - lo_) / static_cast<double>(points);
    std::vector<double> logp(points);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points; ++i) {
      const double th = lo_ + (static_cast<double>(i) + 0.5) * h;
      logp[i] = target.log_prior(th) + target.log_q_data(th) - oracle.log_partition(th);
      mx = std::max(mx, logp[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < points; ++i) z += mass_[i] = std::exp(logp[i] - mx);
    for (double& m : mass_) m /= z;
  }

  // Posterior mass of each of `bins` equal-width bins over (lo, hi).
  std::vector<double> binned(std::size_t bins) const {
    if (mass_.size() % bins != 0) throw ConfigError("grid posterior: grid size must be a multiple of the bin count");
    std::vector<double> out(bins, 0.0);
    const std::size_t per = mass_.size() / bins;
    for (std::size_t i = 0; i < mass_.size(); ++i) out[i / per] += mass_[i];
    return out;
  }

  double mean() const {
    const double h = (hi_ - lo_) / static_cast<double>(mass_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mass_.size(); ++i) acc += mass_[i] * (lo_ + (static_cast<double>(i) + 0.5) * h);
    return acc;
  }

 private:
  double lo_, hi_;
  std::vector<double> mass_;
};

// Proportions of draws per equal-width bin over (lo, hi).
inline std::vector<double> bin_counts(const std::vector<double>& xs, double lo, double hi, std::size_t bins) {
  std::vector<double> out(bins, 0.0);
  for (double x : xs) {
    auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
    out[std::min(b, bins - 1)] += 1.0;
  }
  return out;
}

// Observed lattice: one exact draw at beta_true.
inline models::Spins simulate_ising_data(int side, double beta_true, std::uint64_t seed) {
  return IsingPerfectSampler(side)(beta_true, seed, 0);
}

}  // namespace perfect::moller
