#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/model.hpp"

namespace perfect::models {

// Reflecting walk on {0.25, 0.5, 2, 4}: bit 1 moves up a rung (stays at the
// ceiling), bit 0 moves down (stays at the floor). Monotone under <=.
inline constexpr std::array<double, 4> kLadderRungs{0.25, 0.5, 2.0, 4.0};

inline std::size_t ladder_rung(double x) {
  for (std::size_t i = 0; i < kLadderRungs.size(); ++i)
    if (kLadderRungs[i] == x) return i;
  throw ConfigError("ladder walk: invalid state " + format_real(x));
}

inline double ladder_step(double x, bool up) {
  const std::size_t i = ladder_rung(x);
  if (up) return kLadderRungs[i + 1 < kLadderRungs.size() ? i + 1 : i];
  return kLadderRungs[i > 0 ? i - 1 : 0];
}

class LadderWalk {
 public:
  using state_type = double;

  explicit LadderWalk(double p) : p_(p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("ladder walk: p must lie in [0,1]");
  }

  double p() const noexcept { return p_; }
  NoiseShape noise_shape() const { return NoiseShape{0, 0, {p_}}; }
  std::vector<double> states() const { return {kLadderRungs.begin(), kLadderRungs.end()}; }

  double step(double x, const NoiseAtom& atom) const { return ladder_step(x, atom.bernoullis.at(0) != 0); }

  bool precedes(double a, double b) const noexcept { return a <= b; }
  double min_state() const noexcept { return kLadderRungs.front(); }
  double max_state() const noexcept { return kLadderRungs.back(); }

  std::vector<std::pair<NoiseAtom, double>> atom_support() const {
    return {{bernoulli_atom({1}), p_}, {bernoulli_atom({0}), 1.0 - p_}};
  }

  FiniteChainSpec<double> transition_spec() const {
    FiniteChainSpec<double> spec{states(), Eigen::MatrixXd::Zero(4, 4)};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      spec.matrix(r, static_cast<Eigen::Index>(ladder_rung(ladder_step(kLadderRungs[i], true)))) += p_;
      spec.matrix(r, static_cast<Eigen::Index>(ladder_rung(ladder_step(kLadderRungs[i], false)))) += 1.0 - p_;
    }
    return spec;
  }

 private:
  double p_;
};

}  // namespace perfect::models
