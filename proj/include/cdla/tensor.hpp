#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cdla/error.hpp"

namespace cdla {

// Dense row-major matrix of doubles. Every value in the library is at most
// two-dimensional: lists of documents are (n x d), scalars are (1 x 1).
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ShapeError("tensor of shape " + shape_string(rows_, cols_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in tensor literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(v));
  }

  static Tensor column(std::span<const double> v) {
    return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  static Tensor scalar(double x) { return Tensor(1, 1, x); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(rows_, cols_));
    return values_[0];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double x) { std::fill(values_.begin(), values_.end(), x); }

  std::string shape_string() const { return shape_string(rows_, cols_); }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

// Partition of the rows of a stacked batch into consecutive lists, one per
// query. offsets has count()+1 entries, offsets.front() == 0.
class Segments {
 public:
  Segments() : offsets_{0} {}

  static Segments from_sizes(std::span<const std::size_t> sizes) {
    Segments s;
    s.offsets_.reserve(sizes.size() + 1);
    for (std::size_t n : sizes) s.offsets_.push_back(s.offsets_.back() + n);
    return s;
  }

  static Segments uniform(std::size_t count, std::size_t length) {
    std::vector<std::size_t> sizes(count, length);
    return from_sizes(sizes);
  }

  static Segments single(std::size_t length) { return uniform(1, length); }

  void push(std::size_t length) { offsets_.push_back(offsets_.back() + length); }

  std::size_t count() const noexcept { return offsets_.size() - 1; }
  std::size_t begin(std::size_t i) const { return offsets_[i]; }
  std::size_t end(std::size_t i) const { return offsets_[i + 1]; }
  std::size_t size(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::size_t total() const noexcept { return offsets_.back(); }

  friend bool operator==(const Segments&, const Segments&) = default;

 private:
  std::vector<std::size_t> offsets_;
};

}  // namespace cdla
