#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "perfect/errors.hpp"
#include "perfect/philox.hpp"

namespace perfect {

// How many deviates of each kind one application of a step consumes.
// Bernoulli bits carry their own success probabilities; each bit is derived
// from a dedicated uniform, so changing one probability never shifts any
// other deviate.
struct NoiseShape {
  std::size_t uniforms = 0;
  std::size_t normals = 0;
  std::vector<double> bernoulli_p;

  bool operator==(const NoiseShape&) const = default;
};

// Key of one atom: (seed, time index, replicate). Time may be negative.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::int64_t t = 0;
  std::uint32_t replicate = 0;

  bool operator==(const NoiseKey&) const = default;
};

namespace slot {
inline constexpr std::uint32_t kUniform = 0;
inline constexpr std::uint32_t kNormal = 1;
inline constexpr std::uint32_t kBernoulli = 2;
// Auxiliary unbounded streams (rejection loops, slice W-sequences, ...)
// occupy slots kAuxBase + stream.
inline constexpr std::uint32_t kAuxBase = 3;
inline constexpr std::uint32_t kMaxSlot = 255;
}  // namespace slot

namespace detail {

inline constexpr std::uint64_t kMaxBlock = (1ull << 24) - 1;

inline double bits_to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t x = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

// Uniform(0,1) deviate at (key, slot, index). Constant time in every argument;
// the open interval excludes both endpoints.
inline double keyed_uniform(const NoiseKey& key, std::uint32_t slot_id, std::uint64_t index) {
  const std::uint64_t block = index >> 1;
  if (slot_id > slot::kMaxSlot || block > detail::kMaxBlock) {
    throw CapExceeded("noise index out of keyed range (slot " + std::to_string(slot_id) +
                      ", index " + std::to_string(index) + ")");
  }
  const auto t = static_cast<std::uint64_t>(key.t);
  const Philox4x32::counter_type ctr{static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32),
                                     key.replicate, (slot_id << 24) | static_cast<std::uint32_t>(block)};
  const Philox4x32::key_type k{static_cast<std::uint32_t>(key.seed), static_cast<std::uint32_t>(key.seed >> 32)};
  const auto out = Philox4x32::apply(ctr, k);
  return (index & 1u) == 0 ? detail::bits_to_open_unit(out[0], out[1]) : detail::bits_to_open_unit(out[2], out[3]);
}

inline double standard_normal_quantile(double u) {
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
}

// The deviates one step consumes. Atoms derived from a key can also serve
// unbounded auxiliary streams; hand-built atoms may script those streams.
class NoiseAtom {
 public:
  std::vector<double> uniforms;
  std::vector<double> normals;
  std::vector<std::uint8_t> bernoullis;
  std::optional<NoiseKey> key;
  std::vector<std::vector<double>> scripted_aux;

  double aux_uniform(std::uint32_t stream, std::uint64_t j) const {
    if (key) return keyed_uniform(*key, slot::kAuxBase + stream, j);
    if (stream < scripted_aux.size() && j < scripted_aux[stream].size()) return scripted_aux[stream][j];
    throw ConfigError("auxiliary stream " + std::to_string(stream) + " index " + std::to_string(j) +
                      " not available on a scripted atom");
  }

  double aux_normal(std::uint32_t stream, std::uint64_t j) const {
    return standard_normal_quantile(aux_uniform(stream, j));
  }

  bool matches(const NoiseShape& shape) const noexcept {
    return uniforms.size() == shape.uniforms && normals.size() == shape.normals &&
           bernoullis.size() == shape.bernoulli_p.size();
  }

  bool operator==(const NoiseAtom&) const = default;
};

inline NoiseAtom noise_at(std::uint64_t seed, std::int64_t t, std::uint32_t replicate, const NoiseShape& shape) {
  NoiseAtom atom;
  const NoiseKey key{seed, t, replicate};
  atom.key = key;
  atom.uniforms.resize(shape.uniforms);
  for (std::size_t i = 0; i < shape.uniforms; ++i) atom.uniforms[i] = keyed_uniform(key, slot::kUniform, i);
  atom.normals.resize(shape.normals);
  for (std::size_t i = 0; i < shape.normals; ++i)
    atom.normals[i] = standard_normal_quantile(keyed_uniform(key, slot::kNormal, i));
  atom.bernoullis.resize(shape.bernoulli_p.size());
  for (std::size_t i = 0; i < shape.bernoulli_p.size(); ++i)
    atom.bernoullis[i] = keyed_uniform(key, slot::kBernoulli, i) < shape.bernoulli_p[i] ? 1 : 0;
  return atom;
}

inline NoiseAtom bernoulli_atom(std::initializer_list<int> bits) {
  NoiseAtom atom;
  for (int b : bits) atom.bernoullis.push_back(static_cast<std::uint8_t>(b != 0));
  return atom;
}

// Anything that hands out the atom for a time index.
template <typename S>
concept NoiseSource = requires(const S& s, std::int64_t t) {
  { s(t) } -> std::convertible_to<NoiseAtom>;
};

// The production source: atoms re-derived on demand from (seed, t, replicate).
struct KeyedNoise {
  std::uint64_t seed = 0;
  std::uint32_t replicate = 0;
  NoiseShape shape;

  NoiseAtom operator()(std::int64_t t) const { return noise_at(seed, t, replicate, shape); }
};

// Fixed atoms for tests and scripted traces. `backward` takes the atoms in
// chronological order xi_{-T}, ..., xi_{-1}; asking for any other time index
// throws CapExceeded, so a sampler that runs out of script reports
// non-coalescence instead of inventing noise.
class ScriptedNoise {
 public:
  ScriptedNoise() = default;

  static ScriptedNoise backward(std::vector<NoiseAtom> chronological) {
    ScriptedNoise s;
    const auto depth = static_cast<std::int64_t>(chronological.size());
    for (std::int64_t i = 0; i < depth; ++i) s.atoms_[i - depth] = std::move(chronological[static_cast<std::size_t>(i)]);
    return s;
  }

  static ScriptedNoise forward(std::vector<NoiseAtom> chronological) {
    ScriptedNoise s;
    for (std::size_t i = 0; i < chronological.size(); ++i) s.atoms_[static_cast<std::int64_t>(i)] = std::move(chronological[i]);
    return s;
  }

  void set(std::int64_t t, NoiseAtom atom) { atoms_[t] = std::move(atom); }

  NoiseAtom operator()(std::int64_t t) const {
    const auto it = atoms_.find(t);
    if (it == atoms_.end()) throw CapExceeded("scripted noise exhausted at t=" + std::to_string(t));
    return it->second;
  }

 private:
  std::map<std::int64_t, NoiseAtom> atoms_;
};

}  // namespace perfect
