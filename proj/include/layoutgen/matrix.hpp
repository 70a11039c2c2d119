#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace layoutgen {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Throws ArgumentError if data.size() != rows * cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  bool all_finite() const;
  void fill(double v);

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& a);
/// Rows of `a` followed by the columns of `b` (same row count).
Matrix hconcat(const Matrix& a, const Matrix& b);
/// Appends `v` to every row of `a`.
Matrix append_to_rows(const Matrix& a, std::span<const double> v);
std::vector<double> row_mean(const Matrix& a);
/// Symmetric permutation P A P^T where new index i holds old index perm[i].
Matrix permute_symmetric(const Matrix& a, std::span<const std::size_t> perm);
Matrix permute_rows(const Matrix& a, std::span<const std::size_t> perm);

double max_abs_diff(const Matrix& a, const Matrix& b);
bool is_symmetric(const Matrix& a, double tol = 1e-12);

}  // namespace layoutgen
