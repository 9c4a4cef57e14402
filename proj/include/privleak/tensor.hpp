#pragma once

#include <Eigen/Core>

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "privleak/error.hpp"

namespace privleak {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major n-dimensional array. The leading extent is the batch axis
/// wherever a tensor carries a batch.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Vec<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(numel(shape_))) {
    check_extents();
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor of shape " + to_string(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " values");
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Leading extent as rows, everything else flattened into columns.
  Eigen::Map<RowMat<Scalar>> rows() { return {data_.data(), shape_.at(0), row_size()}; }
  Eigen::Map<const RowMat<Scalar>> rows() const {
    return {data_.data(), shape_.at(0), row_size()};
  }
  Index row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (Index e : shape_)
      if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape_));
  }

  Shape shape_;
  Vector data_;
};

/// Rows [begin, begin + count) of a batch tensor.
template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& t, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > t.dim(0))
    throw ShapeError("row slice out of range for tensor " + to_string(t.shape()));
  Shape shape = t.shape();
  shape[0] = count;
  const Index row = t.row_size();
  return Tensor<Scalar>(std::move(shape), t.data().segment(begin * row, count * row));
}

/// Rows of `t` selected by `indices`, in that order.
template <typename Scalar, typename IndexRange>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& t, const IndexRange& indices) {
  Shape shape = t.shape();
  shape[0] = static_cast<Index>(std::size(indices));
  Tensor<Scalar> out(std::move(shape));
  const Index row = t.row_size();
  Index r = 0;
  for (auto i : indices) {
    const auto src = static_cast<Index>(i);
    if (src < 0 || src >= t.dim(0)) throw ShapeError("gather index out of range");
    out.data().segment(r++ * row, row) = t.data().segment(src * row, row);
  }
  return out;
}

}  // namespace privleak
