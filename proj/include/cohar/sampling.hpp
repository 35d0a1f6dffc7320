#pragma once

#include "cohar/rng.hpp"
#include "cohar/tensor.hpp"

namespace cohar {

/// I.i.d. standard Gumbel draws, filled in row-major order.
inline Tensor gumbel_sample(SeededRng& rng, const Shape& shape) {
  Tensor g(shape);
  for (double& v : g.data()) v = rng.gumbel();
  return g;
}

}  // namespace cohar
