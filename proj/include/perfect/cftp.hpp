#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/model.hpp"
#include "perfect/noise.hpp"

namespace perfect {

inline constexpr std::int64_t kDefaultDepthCap = std::int64_t{1} << 20;

// Binary back-off: depths 1, 2, 4, ..., tmax.
class BackoffSchedule {
 public:
  explicit BackoffSchedule(std::int64_t tmax = kDefaultDepthCap) : tmax_(tmax) {
    if (tmax < 1 || (tmax & (tmax - 1)) != 0) throw ConfigError("depth cap must be a power of 2");
  }

  std::int64_t tmax() const noexcept { return tmax_; }

  std::vector<std::int64_t> depths() const {
    std::vector<std::int64_t> out;
    for (std::int64_t d = 1; d <= tmax_; d *= 2) out.push_back(d);
    return out;
  }

 private:
  std::int64_t tmax_;
};

template <typename State>
struct CoalescenceCertificate {
  std::int64_t depth = 0;          // back-off depth T that certified coalescence
  State draw{};                    // coalesced value at time 0
  std::uint64_t evals = 0;         // applications of phi (or Psi) over all depths
  std::int64_t coalesced_within = 0;  // first time index <= 0 at which the final-depth paths agreed
};

namespace detail {

template <typename State>
bool all_equal(const std::vector<State>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

[[noreturn]] inline void throw_no_coalescence(std::int64_t cap) {
  throw CapExceeded("no coalescence by cap T=" + std::to_string(cap));
}

}  // namespace detail

// Values at time 0 of the paths started at time -depth from each start,
// driven by xi_{-depth}, ..., xi_{-1}.
template <RecursionModel M, NoiseSource N>
std::vector<typename M::state_type> backward_map(const M& model, std::vector<typename M::state_type> starts,
                                                 const N& noise, std::int64_t depth) {
  for (std::int64_t t = -depth; t < 0; ++t) {
    const NoiseAtom atom = noise(t);
    require_shape(model, atom);
    for (auto& x : starts) x = model.step(x, atom);
  }
  return starts;
}

// Every path at every time: row r holds the states at time -depth + r.
template <RecursionModel M, NoiseSource N>
std::vector<std::vector<typename M::state_type>> backward_paths(const M& model,
                                                                std::vector<typename M::state_type> starts,
                                                                const N& noise, std::int64_t depth) {
  std::vector<std::vector<typename M::state_type>> rows;
  rows.reserve(static_cast<std::size_t>(depth) + 1);
  rows.push_back(starts);
  for (std::int64_t t = -depth; t < 0; ++t) {
    const NoiseAtom atom = noise(t);
    require_shape(model, atom);
    for (auto& x : starts) x = model.step(x, atom);
    rows.push_back(starts);
  }
  return rows;
}

// Brute force: follow every enumerated state until all agree at time 0.
template <FiniteModel M, NoiseSource N>
CoalescenceCertificate<typename M::state_type> cftp_bruteforce(const M& model, const N& noise,
                                                              const BackoffSchedule& schedule = BackoffSchedule{}) {
  using State = typename M::state_type;
  const std::vector<State> space = model.states();
  CoalescenceCertificate<State> cert;
  for (const std::int64_t depth : schedule.depths()) {
    std::vector<State> paths = space;
    std::int64_t merged_at = paths.size() == 1 ? -depth : 1;
    for (std::int64_t t = -depth; t < 0; ++t) {
      const NoiseAtom atom = noise(t);
      require_shape(model, atom);
      for (auto& x : paths) x = model.step(x, atom);
      cert.evals += paths.size();
      if (merged_at > 0 && detail::all_equal(paths)) merged_at = t + 1;
    }
    if (detail::all_equal(paths)) {
      cert.depth = depth;
      cert.draw = paths.front();
      cert.coalesced_within = merged_at;
      return cert;
    }
  }
  detail::throw_no_coalescence(schedule.tmax());
}

// Monotone CFTP: only the paths from the least and greatest states are run;
// every other path is sandwiched between them.
template <OrderedModel M, NoiseSource N>
CoalescenceCertificate<typename M::state_type> cftp_monotone(const M& model, const N& noise,
                                                            const BackoffSchedule& schedule = BackoffSchedule{}) {
  using State = typename M::state_type;
  CoalescenceCertificate<State> cert;
  for (const std::int64_t depth : schedule.depths()) {
    State lo = model.min_state();
    State hi = model.max_state();
    std::int64_t merged_at = lo == hi ? -depth : 1;
    for (std::int64_t t = -depth; t < 0; ++t) {
      const NoiseAtom atom = noise(t);
      require_shape(model, atom);
      State lo_next = model.step(lo, atom);
      State hi_next = model.step(hi, atom);
      cert.evals += 2;
      if (!model.precedes(lo_next, hi_next)) {
        throw OrderViolation("monotone step broke the order: x=" + format_state(lo) + " precedes y=" +
                             format_state(hi) + " but phi(x,xi) does not precede phi(y,xi) for xi=" +
                             format_atom(atom));
      }
      lo = std::move(lo_next);
      hi = std::move(hi_next);
      if (merged_at > 0 && lo == hi) merged_at = t + 1;
    }
    if (lo == hi) {
      cert.depth = depth;
      cert.draw = std::move(lo);
      cert.coalesced_within = merged_at;
      return cert;
    }
  }
  detail::throw_no_coalescence(schedule.tmax());
}

// Set-valued bounding chain over the trajectory xi_{-depth}..xi_{-1};
// element r is Y at time -depth + r, starting from the full space.
template <BoundedModel M, NoiseSource N>
std::vector<BoundingSet<typename M::state_type>> bounding_trajectory(const M& model, const N& noise,
                                                                     std::int64_t depth) {
  using State = typename M::state_type;
  std::vector<BoundingSet<State>> out;
  out.reserve(static_cast<std::size_t>(depth) + 1);
  out.emplace_back(model.states());
  for (std::int64_t t = -depth; t < 0; ++t) {
    const NoiseAtom atom = noise(t);
    require_shape(model, atom);
    out.push_back(model.bounding_update(out.back(), atom));
  }
  return out;
}

// Bounding-chain CFTP: coalescence is declared when the bounding set is a
// singleton at time 0 (after a singleton, the update just follows phi).
template <BoundedModel M, NoiseSource N>
CoalescenceCertificate<typename M::state_type> cftp_bounding(const M& model, const N& noise,
                                                            const BackoffSchedule& schedule = BackoffSchedule{}) {
  using State = typename M::state_type;
  CoalescenceCertificate<State> cert;
  for (const std::int64_t depth : schedule.depths()) {
    BoundingSet<State> y(model.states());
    std::int64_t merged_at = y.singleton() ? -depth : 1;
    for (std::int64_t t = -depth; t < 0; ++t) {
      const NoiseAtom atom = noise(t);
      require_shape(model, atom);
      cert.evals += y.size();
      y = model.bounding_update(y, atom);
      if (y.empty()) throw ConfigError("bounding update produced an empty set");
      if (merged_at > 0 && y.singleton()) merged_at = t + 1;
    }
    if (y.singleton()) {
      cert.depth = depth;
      cert.draw = y.front();
      cert.coalesced_within = merged_at;
      return cert;
    }
  }
  detail::throw_no_coalescence(schedule.tmax());
}

}  // namespace perfect
