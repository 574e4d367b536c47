#pragma once

#include <cassert>
#include <algorithm>
#include <cstddef>
#include <type_traits>
#include <span>
#include <vector>

namespace surealm {

/// Non-owning row-major view over a rows x cols block of doubles.
template <typename T>
class BasicMatView {
 public:
  BasicMatView() = default;
  BasicMatView(T* data, std::size_t rows, std::size_t cols)
      : data_(data), rows_(rows), cols_(cols) {}

  // Allow MatView -> ConstMatView.
  template <typename U>
    requires std::is_convertible_v<U*, T*>
  BasicMatView(const BasicMatView<U>& other)  // NOLINT(google-explicit-constructor)
      : data_(other.data()), rows_(other.rows()), cols_(other.cols()) {}

  T* data() const noexcept { return data_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_ * cols_; }

  T& operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  std::span<T> row(std::size_t r) const noexcept {
    assert(r < rows_);
    return {data_ + r * cols_, cols_};
  }
  std::span<T> flat() const noexcept { return {data_, size()}; }

 private:
  T* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

using MatView = BasicMatView<double>;
using ConstMatView = BasicMatView<const double>;

/// Owning row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  MatView view() noexcept { return {data_.data(), rows_, cols_}; }
  ConstMatView view() const noexcept { return {data_.data(), rows_, cols_}; }
  operator MatView() noexcept { return view(); }             // NOLINT
  operator ConstMatView() const noexcept { return view(); }  // NOLINT

  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Dense kernels. All accumulate into `c`. Inner loops run over the output
// row so each output element is summed in a fixed order over the shared
// dimension, independent of vectorization.

/// c += a * b, a: m x k, b: k x n.
void gemm_acc(ConstMatView a, ConstMatView b, MatView c);
/// c += a * b^T, a: m x k, b: n x k.
void gemm_nt_acc(ConstMatView a, ConstMatView b, MatView c);
/// c += a^T * b, a: k x m, b: k x n.
void gemm_tn_acc(ConstMatView a, ConstMatView b, MatView c);

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace surealm
