#pragma once

#include <algorithm>
#include <concepts>
#include <cstdio>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "perfect/noise.hpp"

namespace perfect {

// A finite set of states kept sorted and unique; the value of a bounding chain.
template <typename State>
class BoundingSet {
 public:
  BoundingSet() = default;
  explicit BoundingSet(std::vector<State> states) : states_(std::move(states)) {
    std::sort(states_.begin(), states_.end());
    states_.erase(std::unique(states_.begin(), states_.end()), states_.end());
  }
  BoundingSet(std::initializer_list<State> states) : BoundingSet(std::vector<State>(states)) {}

  const std::vector<State>& states() const noexcept { return states_; }
  std::size_t size() const noexcept { return states_.size(); }
  bool empty() const noexcept { return states_.empty(); }
  bool singleton() const noexcept { return states_.size() == 1; }
  bool contains(const State& s) const { return std::binary_search(states_.begin(), states_.end(), s); }
  const State& front() const { return states_.front(); }
  const State& back() const { return states_.back(); }

  bool operator==(const BoundingSet&) const = default;

 private:
  std::vector<State> states_;
};

// phi: (State, NoiseAtom) -> State, with the per-step noise consumption.
template <typename M>
concept RecursionModel = requires(const M& m, const typename M::state_type& x, const NoiseAtom& a) {
  typename M::state_type;
  { m.step(x, a) } -> std::convertible_to<typename M::state_type>;
  { m.noise_shape() } -> std::convertible_to<NoiseShape>;
};

template <typename M>
concept FiniteModel = RecursionModel<M> && requires(const M& m) {
  { m.states() } -> std::convertible_to<std::vector<typename M::state_type>>;
};

// A partial order preserved by step, with least and greatest elements.
template <typename M>
concept OrderedModel = RecursionModel<M> &&
    requires(const M& m, const typename M::state_type& a, const typename M::state_type& b) {
      { m.precedes(a, b) } -> std::convertible_to<bool>;
      { m.min_state() } -> std::convertible_to<typename M::state_type>;
      { m.max_state() } -> std::convertible_to<typename M::state_type>;
    };

template <typename M>
concept BoundedModel = FiniteModel<M> &&
    requires(const M& m, const BoundingSet<typename M::state_type>& y, const NoiseAtom& a) {
      { m.bounding_update(y, a) } -> std::convertible_to<BoundingSet<typename M::state_type>>;
    };

// Models whose atom takes finitely many values, listed with probabilities.
template <typename M>
concept DiscreteNoiseModel = RecursionModel<M> && requires(const M& m) {
  { m.atom_support() } -> std::convertible_to<std::vector<std::pair<NoiseAtom, double>>>;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_state(double v) { return format_real(v); }
inline std::string format_state(int v) { return std::to_string(v); }

template <typename T>
std::string format_state(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_real(v[i]);
    } else {
      out += std::to_string(static_cast<long long>(v[i]));
    }
  }
  return out + "]";
}

inline std::string format_atom(const NoiseAtom& a) {
  std::string out = "{";
  for (auto b : a.bernoullis) out += "b=" + std::to_string(b) + " ";
  for (double u : a.uniforms) out += "u=" + format_real(u) + " ";
  for (double z : a.normals) out += "z=" + format_real(z) + " ";
  if (a.key) out += "key=(" + std::to_string(a.key->seed) + "," + std::to_string(a.key->t) + "," +
                    std::to_string(a.key->replicate) + ")";
  return out + "}";
}

template <RecursionModel M>
void require_shape(const M& model, const NoiseAtom& atom) {
  if (!atom.matches(model.noise_shape())) {
    throw ConfigError("noise atom shape does not match the model's declared consumption");
  }
}

}  // namespace perfect
