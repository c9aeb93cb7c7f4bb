#pragma once

#include <cmath>
#include <cstdint>

#include "pcqa/autodiff.hpp"
#include "pcqa/rng.hpp"
#include "pcqa/tensor.hpp"

namespace testutil {

inline pcqa::Tensor random_tensor(std::size_t r, std::size_t c, pcqa::CounterRng& rng,
                                  double lo = -1.0, double hi = 1.0) {
  pcqa::Tensor t = pcqa::Tensor::zeros({r, c});
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Rejects draws whose column-wise max is nearly tied or whose entries sit on
// the relu kink; keeps finite-difference probes away from non-smooth points.
inline pcqa::Tensor smooth_random_tensor(std::size_t r, std::size_t c, pcqa::CounterRng& rng) {
  for (;;) {
    pcqa::Tensor t = random_tensor(r, c, rng);
    bool ok = true;
    for (double v : t.data)
      if (std::abs(v) < 1e-2) ok = false;
    for (std::size_t j = 0; j < c && ok; ++j) {
      double best = -1e30, second = -1e30;
      for (std::size_t i = 0; i < r; ++i) {
        double v = t.at(i, j);
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      if (r > 1 && best - second < 1e-3) ok = false;
    }
    if (ok) return t;
  }
}

// Reduces an arbitrary matrix node to a scalar through a fixed random
// weighting, so every entry influences the loss.
inline pcqa::Node* weighted_total(pcqa::Graph& g, pcqa::Node* x, std::uint64_t salt) {
  pcqa::CounterRng rng(salt, 77);
  pcqa::Node* w = g.leaf(random_tensor(x->value.rows(), x->value.cols(), rng, 0.5, 1.5));
  pcqa::Node* prod = g.mul(x, w);
  pcqa::Node* left = g.leaf(pcqa::Tensor::full({1, x->value.rows()}, 1.0));
  pcqa::Node* right = g.leaf(pcqa::Tensor::full({x->value.cols(), 1}, 1.0));
  return g.matmul(g.matmul(left, prod), right);
}

}  // namespace testutil
