#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace anyway {

/// Dense row-major matrix of doubles. Vectors are represented as 1×n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  void fill(double value);

  /// Bitwise equality of shape and contents.
  bool bit_equal(const Matrix& other) const;

  std::string shape_string() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a·b
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Adds the 1×cols row vector `bias` to every row of `m`.
void add_row_vector(Matrix& m, const Matrix& bias);
/// Column sums as a 1×cols matrix.
Matrix column_sums(const Matrix& m);
/// Stacks a on top of b.
Matrix vstack(const Matrix& a, const Matrix& b);
/// Selected rows, in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

/// y += alpha·x, shapes must match.
void axpy(double alpha, const Matrix& x, Matrix& y);

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what);

}  // namespace anyway
