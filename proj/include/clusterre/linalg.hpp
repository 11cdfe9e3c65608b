#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace clusterre {

using Vec = std::vector<double>;

// Dense row-major matrix. Everything in this project is small (K <= ~20
// columns, a few hundred rows), so no attempt is made at blocking or BLAS.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}
  Matrix(int rows, int cols, std::initializer_list<double> values);

  static Matrix identity(int n);
  static Matrix diagonal(const Vec& d);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

  double* row_ptr(int i) { return data_.data() + static_cast<size_t>(i) * cols_; }
  const double* row_ptr(int i) const { return data_.data() + static_cast<size_t>(i) * cols_; }

  Vec row(int i) const;
  Vec col(int j) const;
  void set_row(int i, const Vec& v);
  void set_col(int j, const Vec& v);
  Matrix columns(const std::vector<int>& idx) const;

  Vec diag() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Vec operator*(const Matrix& a, const Vec& v);

Matrix transpose(const Matrix& a);
Matrix hcat(const Matrix& a, const Matrix& b);

double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
Vec operator+(const Vec& a, const Vec& b);
Vec operator-(const Vec& a, const Vec& b);
Vec operator*(double s, const Vec& a);

// v' M v for square M.
double quad_form(const Matrix& m, const Vec& v);

// Cholesky factor L (lower triangular, A = L L'). Throws NumericError naming
// the failing pivot if A is not positive definite; `context` prefixes the
// message so callers can name the offending column.
Matrix cholesky(const Matrix& a, const std::string& context = "");

// Solve A x = b / A X = B given the Cholesky factor of A.
Vec chol_solve(const Matrix& l, const Vec& b);
Matrix chol_solve(const Matrix& l, const Matrix& b);
Matrix chol_inverse(const Matrix& l);

// Inverse and log-determinant of a symmetric positive definite matrix.
Matrix spd_inverse(const Matrix& a, const std::string& context = "");
double spd_log_det(const Matrix& a, const std::string& context = "");

// Symmetric eigendecomposition by cyclic Jacobi rotations. Eigenvalues are
// returned in ascending order with matching eigenvector columns. Intended
// for the small symmetric matrices used throughout (K <= ~20).
struct EigenSym {
  Vec values;
  Matrix vectors;  // column k is the eigenvector of values[k]
};
EigenSym eigen_sym(const Matrix& a);

// Symmetric positive semidefinite square root via eigendecomposition.
Matrix sym_sqrt(const Matrix& a);

// Least-squares solve of X beta = y through the normal equations, followed by
// one step of iterative refinement. Throws NumericError naming the offending
// column (via `names`, when provided) on rank deficiency.
Vec ols_solve(const Matrix& x, const Vec& y, const std::vector<std::string>& names = {});

}  // namespace clusterre
