#pragma once

#include <utility>
#include <vector>

#include "perfect/errors.hpp"
#include "perfect/finite_chain.hpp"
#include "perfect/model.hpp"

namespace perfect::models {

// Three-state walk on {0.25, 0.5, 2} with transition matrix
//
//        0.25   0.5    2
//   0.25 [ p    1-p    0  ]
//   0.5  [ 0     p    1-p ]
//   2    [ p     0    1-p ]
//
// driven by one Bernoulli(p) bit. Bit 1 keeps 0.25 and 0.5 in place but sends
// 2 down to 0.25, so the step is neither monotone nor anti-monotone.
class NonMonotoneWalk {
 public:
  using state_type = double;

  explicit NonMonotoneWalk(double p) : p_(p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("non-monotone walk: p must lie in [0,1]");
  }

  double p() const noexcept { return p_; }
  NoiseShape noise_shape() const { return NoiseShape{0, 0, {p_}}; }
  std::vector<double> states() const { return {0.25, 0.5, 2.0}; }

  double step(double x, const NoiseAtom& atom) const {
    const bool one = atom.bernoullis.at(0) != 0;
    if (x == 0.25) return one ? 0.25 : 0.5;
    if (x == 0.5) return one ? 0.5 : 2.0;
    if (x == 2.0) return one ? 0.25 : 2.0;
    throw ConfigError("non-monotone walk: invalid state " + format_real(x));
  }

  // Set-valued update. From the full space one transition lands in
  // {0.25, 0.5} or {0.5, 2}; from there the closed-form table applies.
  // Sets outside the table (never reached from the full space) fall back to
  // the exact pointwise image.
  BoundingSet<double> bounding_update(const BoundingSet<double>& y, const NoiseAtom& atom) const {
    const bool one = atom.bernoullis.at(0) != 0;
    static const BoundingSet<double> kLow{0.25, 0.5};
    static const BoundingSet<double> kHigh{0.5, 2.0};
    if (y.singleton()) return BoundingSet<double>{step(y.front(), atom)};
    if (y.size() == 3) return one ? kLow : kHigh;
    if (y == kLow) return one ? kLow : kHigh;
    if (y == kHigh) return one ? kLow : BoundingSet<double>{2.0};
    std::vector<double> image;
    for (double x : y.states()) image.push_back(step(x, atom));
    return BoundingSet<double>(std::move(image));
  }

  std::vector<std::pair<NoiseAtom, double>> atom_support() const {
    return {{bernoulli_atom({1}), p_}, {bernoulli_atom({0}), 1.0 - p_}};
  }

  FiniteChainSpec<double> transition_spec() const {
    Eigen::MatrixXd a(3, 3);
    a << p_, 1.0 - p_, 0.0,
         0.0, p_, 1.0 - p_,
         p_, 0.0, 1.0 - p_;
    return FiniteChainSpec<double>{states(), a};
  }

 private:
  double p_;
};

}  // namespace perfect::models
