#pragma once

#include <Eigen/Core>

#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "idnanet/errors.hpp"

namespace idna {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  return os.str();
}

/// Dense row-major tensor value. Rank and dimensions are runtime values; storage is a
/// flat Eigen array so element-wise math stays expression-friendly.
template <typename Scalar_>
struct Tensor {
  using Scalar = Scalar_;
  using Array = ArrayX<Scalar>;

  Shape shape;
  Array data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Array::Zero(numel(shape))) {}
  Tensor(Shape s, Array d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw InvariantError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
  }

  static Tensor filled(Shape s, Scalar value) {
    Tensor t(std::move(s));
    t.data.setConstant(value);
    return t;
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(Index i) const { return shape.at(static_cast<std::size_t>(i)); }

  Eigen::Map<MatrixR<Scalar>> matrix(Index rows, Index cols) {
    return Eigen::Map<MatrixR<Scalar>>(data.data(), rows, cols);
  }
  Eigen::Map<const MatrixR<Scalar>> matrix(Index rows, Index cols) const {
    return Eigen::Map<const MatrixR<Scalar>>(data.data(), rows, cols);
  }

  /// Leading dimension by everything else.
  Eigen::Map<const MatrixR<Scalar>> rows_view() const { return matrix(shape.at(0), size() / shape.at(0)); }
  Eigen::Map<MatrixR<Scalar>> rows_view() { return matrix(shape.at(0), size() / shape.at(0)); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }
};

}  // namespace idna
