#pragma once

#include "tocoad/common.hpp"
#include "tocoad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace tocoad {

// Target coreset size ceil(ratio * n), at least one.
inline Index coreset_size(Index n, double ratio) {
  if (!(ratio > 0 && ratio <= 1)) throw ArgumentError("coreset ratio must lie in (0,1]");
  const auto k = static_cast<Index>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::clamp<Index>(k, 1, n);
}

// Greedy k-center selection over the rows of `points`. Starts at `start`,
// then repeatedly adds the row farthest from its nearest selected row
// (lowest index on ties). Returns selected row indices in selection order.
template <typename Derived>
std::vector<Index> greedy_k_center(const Eigen::MatrixBase<Derived>& points, Index k, Index start) {
  using T = typename Derived::Scalar;
  const Index n = points.rows();
  if (n == 0) throw ArgumentError("greedy_k_center: empty point set");
  if (k < 1 || k > n) throw ArgumentError("greedy_k_center: k must lie in [1, n]");
  if (start < 0 || start >= n) throw ArgumentError("greedy_k_center: start index out of range");

  std::vector<Index> selected{start};
  selected.reserve(static_cast<std::size_t>(k));
  Eigen::Matrix<T, Eigen::Dynamic, 1> nearest = (points.rowwise() - points.row(start)).rowwise().squaredNorm();
  nearest[start] = T(-1);
  while (static_cast<Index>(selected.size()) < k) {
    Index next = 0;
    nearest.maxCoeff(&next);
    selected.push_back(next);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> d = (points.rowwise() - points.row(next)).rowwise().squaredNorm();
    nearest = nearest.cwiseMin(d);
    nearest[next] = T(-1);
  }
  return selected;
}

// max over rows of the distance to the nearest selected row.
template <typename Derived>
typename Derived::Scalar covering_radius(const Eigen::MatrixBase<Derived>& points, const std::vector<Index>& centers) {
  using T = typename Derived::Scalar;
  T radius = 0;
  for (Index i = 0; i < points.rows(); ++i) {
    T best = std::numeric_limits<T>::infinity();
    for (Index c : centers) best = std::min(best, (points.row(i) - points.row(c)).norm());
    radius = std::max(radius, best);
  }
  return radius;
}

}  // namespace tocoad
