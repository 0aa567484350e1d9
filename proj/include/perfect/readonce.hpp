#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/model.hpp"
#include "perfect/noise.hpp"
#include "perfect/philox.hpp"

namespace perfect {

// Pilot blocks draw from this replicate id so production streams never see them.
inline constexpr std::uint32_t kPilotReplicate = 0xffffffffu;
inline constexpr std::int64_t kDefaultBlockCap = std::int64_t{1} << 20;
inline constexpr std::int64_t kDefaultBlocksPerSample = std::int64_t{1} << 24;

struct BlockSpec {
  std::int64_t K = 1;
  double p_hat = 0.0;
  std::uint64_t pilot_n = 0;
};

template <typename M>
concept ReadOnceModel = RecursionModel<M> && (FiniteModel<M> || OrderedModel<M>);

// Common value of phi_K(x; block) over all x, if the block coalesces.
// Ordered models only run the two extremal paths.
template <ReadOnceModel M>
std::optional<typename M::state_type> block_coalesces(const M& model, std::span<const NoiseAtom> block) {
  using State = typename M::state_type;
  if constexpr (OrderedModel<M>) {
    State lo = model.min_state(), hi = model.max_state();
    for (const auto& atom : block) {
      require_shape(model, atom);
      lo = model.step(lo, atom);
      hi = model.step(hi, atom);
    }
    if (lo == hi) return lo;
    return std::nullopt;
  } else {
    std::vector<State> paths = model.states();
    for (const auto& atom : block) {
      require_shape(model, atom);
      for (auto& x : paths) x = model.step(x, atom);
    }
    for (const auto& x : paths)
      if (!(x == paths.front())) return std::nullopt;
    return paths.front();
  }
}

namespace detail {

inline std::vector<NoiseAtom> block_atoms(std::uint64_t seed, std::uint32_t replicate, std::int64_t index,
                                          std::int64_t K, const NoiseShape& shape) {
  std::vector<NoiseAtom> out;
  out.reserve(static_cast<std::size_t>(K));
  for (std::int64_t i = 0; i < K; ++i) out.push_back(noise_at(seed, index * K + i, replicate, shape));
  return out;
}

}  // namespace detail

// Fraction of pilot_n independent K-blocks that coalesce.
template <ReadOnceModel M>
double estimate_block_coalescence(const M& model, std::int64_t K, std::uint64_t seed, std::uint64_t pilot_n) {
  const std::uint64_t pilot_seed = derive_seed(seed, 0x70696c6fULL, static_cast<std::uint64_t>(K));
  std::uint64_t hits = 0;
  for (std::uint64_t b = 0; b < pilot_n; ++b) {
    const auto block = detail::block_atoms(pilot_seed, kPilotReplicate, static_cast<std::int64_t>(b), K,
                                           model.noise_shape());
    hits += block_coalesces(model, std::span<const NoiseAtom>(block)).has_value() ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pilot_n);
}

// Smallest K in 1, 2, 4, ... whose pilot coalescence rate reaches target.
template <ReadOnceModel M>
BlockSpec choose_block_size(const M& model, std::uint64_t seed, double target = 0.5, std::uint64_t pilot_n = 10000,
                            std::int64_t k_cap = kDefaultBlockCap) {
  if (!(target > 0.0 && target < 1.0)) throw ConfigError("block target must lie in (0,1)");
  if (pilot_n == 0) throw ConfigError("pilot size must be positive");
  for (std::int64_t K = 1; K <= k_cap; K *= 2) {
    const double p = estimate_block_coalescence(model, K, seed, pilot_n);
    if (p >= target) return BlockSpec{K, p, pilot_n};
  }
  throw CapExceeded("no block size up to K=" + std::to_string(k_cap) + " reaches coalescence rate " +
                    format_real(target));
}

template <typename State>
struct RoDraw {
  State value{};
  std::int64_t blocks = 0;  // J: blocks since the previous coalescent block, this one included
};

// Forward block-by-block stream. Only the coalescence path S is carried
// between blocks; block b of the stream is xi_{bK}, ..., xi_{bK+K-1}.
template <ReadOnceModel M>
class RoCftpStream {
 public:
  using State = typename M::state_type;

  RoCftpStream(const M& model, BlockSpec spec, std::uint64_t seed, std::uint32_t replicate = 0,
               std::int64_t blocks_per_sample = kDefaultBlocksPerSample)
      : model_(model), spec_(spec), seed_(seed), replicate_(replicate), cap_(blocks_per_sample) {
    if (spec_.K < 1) throw ConfigError("block length must be >= 1");
    // Burn blocks until the first coalescent one; its value is S_0.
    std::int64_t j = 0;
    while (!path_) {
      if (++j > cap_) throw_cap();
      const auto block = next_block();
      path_ = block_coalesces(model_, std::span<const NoiseAtom>(block));
    }
  }

  RoDraw<State> next() {
    for (std::int64_t j = 1; j <= cap_; ++j) {
      const auto block = next_block();
      if (auto merged = block_coalesces(model_, std::span<const NoiseAtom>(block))) {
        RoDraw<State> out{std::move(*path_), j};
        path_ = std::move(merged);
        return out;
      }
      State x = std::move(*path_);
      for (const auto& atom : block) x = model_.step(x, atom);
      path_ = std::move(x);
    }
    throw_cap();
  }

  std::int64_t blocks_used() const noexcept { return index_; }

 private:
  std::vector<NoiseAtom> next_block() {
    return detail::block_atoms(seed_, replicate_, index_++, spec_.K, model_.noise_shape());
  }

  [[noreturn]] void throw_cap() const {
    throw CapExceeded("read-once stream: no coalescent block within " + std::to_string(cap_) + " blocks");
  }

  M model_;
  BlockSpec spec_;
  std::uint64_t seed_;
  std::uint32_t replicate_;
  std::int64_t cap_;
  std::int64_t index_ = 0;
  std::optional<State> path_;
};

template <typename State>
struct RoCftpResult {
  std::vector<State> draws;
  std::vector<std::int64_t> blocks;
};

template <ReadOnceModel M>
RoCftpResult<typename M::state_type> ro_cftp_stream(const M& model, const BlockSpec& spec, std::uint64_t seed,
                                                    std::size_t n, std::uint32_t replicate = 0) {
  RoCftpStream<M> stream(model, spec, seed, replicate);
  RoCftpResult<typename M::state_type> out;
  out.draws.reserve(n);
  out.blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto d = stream.next();
    out.draws.push_back(std::move(d.value));
    out.blocks.push_back(d.blocks);
  }
  return out;
}

}  // namespace perfect
