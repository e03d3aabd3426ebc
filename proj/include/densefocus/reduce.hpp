#pragma once

#include <cstddef>
#include <span>

namespace densefocus {

// Pairwise (tree) summation. The reduction order depends only on the length
// of the input, so results are bit-identical no matter how the values were
// produced (serially or by a parallel loop writing one slot per element).
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n <= 16) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace densefocus
