#pragma once

#include "convens/common.hpp"

#include <algorithm>
#include <initializer_list>
#include <utility>

namespace convens {

/// Dense row-major n-dimensional array. Activations use NCHW for images and
/// (batch, features) for flat data.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Vector<Scalar>::Zero(shape_product(shape_));
  }

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_product(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor filled(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector<Scalar>& values() { return data_; }
  const Vector<Scalar>& values() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  /// Leading axis as rows, everything else flattened into columns.
  Index rows() const { return shape_.empty() ? 0 : shape_[0]; }
  Index cols() const { return rows() == 0 ? 0 : size() / rows(); }

  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  /// Rows `indices` of the leading axis, in the given order.
  Tensor gather_rows(const std::vector<Index>& indices) const {
    Shape out_shape = shape_;
    out_shape[0] = static_cast<Index>(indices.size());
    Tensor out(out_shape);
    const Index stride = cols();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] < 0 || indices[r] >= rows()) {
        throw ShapeError("row index " + std::to_string(indices[r]) + " out of range");
      }
      std::copy_n(data_.data() + indices[r] * stride, stride,
                  out.data_.data() + static_cast<Index>(r) * stride);
    }
    return out;
  }

  Tensor slice_rows(Index begin, Index end) const {
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    const Index stride = cols();
    return Tensor(out_shape, data_.segment(begin * stride, (end - begin) * stride));
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void validate_shape() const {
    for (Index e : shape_) {
      if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape_));
    }
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch");
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  Vector<Scalar> data_;
};

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace convens
