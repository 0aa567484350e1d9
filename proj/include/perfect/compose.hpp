#pragma once

#include <span>

#include "perfect/model.hpp"

namespace perfect {

// phi(...phi(phi(x0, xi_1), xi_2)..., xi_t).
template <RecursionModel M>
typename M::state_type forward_compose(const M& model, typename M::state_type x0, std::span<const NoiseAtom> noise) {
  for (const auto& atom : noise) {
    require_shape(model, atom);
    x0 = model.step(x0, atom);
  }
  return x0;
}

// phi(...phi(phi(x0, xi_t), xi_{t-1})..., xi_1): the same atoms applied newest first.
template <RecursionModel M>
typename M::state_type backward_compose(const M& model, typename M::state_type x0, std::span<const NoiseAtom> noise) {
  for (auto it = noise.rbegin(); it != noise.rend(); ++it) {
    require_shape(model, *it);
    x0 = model.step(x0, *it);
  }
  return x0;
}

}  // namespace perfect
