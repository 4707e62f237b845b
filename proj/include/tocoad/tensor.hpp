#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>

namespace tocoad {

using Scalar = double;
using Index = Eigen::Index;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowArray = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// NCHW shape. Dense vectors use (n, c, 1, 1).
struct Shape {
  Index n = 0, c = 0, h = 1, w = 1;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Contiguous NCHW array of doubles. All network activations, parameters
// and gradients use this one layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0) : shape_(shape), data_(Eigen::ArrayXd::Constant(shape.size(), fill)) {}
  Tensor(Shape shape, Eigen::ArrayXd data);

  const Shape& shape() const { return shape_; }
  Index size() const { return shape_.size(); }
  bool empty() const { return shape_.size() == 0; }

  Eigen::ArrayXd& data() { return data_; }
  const Eigen::ArrayXd& data() const { return data_; }

  Scalar& at(Index n, Index c, Index y, Index x) { return data_[offset(n, c, y, x)]; }
  Scalar at(Index n, Index c, Index y, Index x) const { return data_[offset(n, c, y, x)]; }

  // Row-major (h x w) view of one channel plane.
  Eigen::Map<RowMatrix<Scalar>> plane(Index n, Index c) {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.h, shape_.w};
  }
  Eigen::Map<const RowMatrix<Scalar>> plane(Index n, Index c) const {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.h, shape_.w};
  }

  // (n x c*h*w) view; for dense layers this is (batch x features).
  Eigen::Map<RowMatrix<Scalar>> rows() { return {data_.data(), shape_.n, shape_.c * shape_.plane()}; }
  Eigen::Map<const RowMatrix<Scalar>> rows() const {
    return {data_.data(), shape_.n, shape_.c * shape_.plane()};
  }

  // One sample as a (c x h*w) matrix.
  Eigen::Map<RowMatrix<Scalar>> sample(Index n) {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
  }
  Eigen::Map<const RowMatrix<Scalar>> sample(Index n) const {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane()};
  }

  Tensor reshaped(Shape shape) const;

 private:
  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  Eigen::ArrayXd data_;
};

}  // namespace tocoad
