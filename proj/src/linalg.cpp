#include "clusterre/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clusterre/errors.hpp"

namespace clusterre {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw NumericError(msg);
}

}  // namespace

Matrix::Matrix(int rows, int cols, std::initializer_list<double> values)
    : rows_(rows), cols_(cols), data_(values) {
  require(static_cast<int>(data_.size()) == rows * cols,
          "matrix initializer size does not match dimensions");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(const Vec& d) {
  Matrix m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  for (size_t i = 0; i < d.size(); ++i) m(static_cast<int>(i), static_cast<int>(i)) = d[i];
  return m;
}

Vec Matrix::row(int i) const {
  return Vec(row_ptr(i), row_ptr(i) + cols_);
}

Vec Matrix::col(int j) const {
  Vec v(rows_);
  for (int i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

void Matrix::set_row(int i, const Vec& v) {
  require(static_cast<int>(v.size()) == cols_, "set_row: size mismatch");
  std::copy(v.begin(), v.end(), row_ptr(i));
}

void Matrix::set_col(int j, const Vec& v) {
  require(static_cast<int>(v.size()) == rows_, "set_col: size mismatch");
  for (int i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
}

Matrix Matrix::columns(const std::vector<int>& idx) const {
  Matrix out(rows_, static_cast<int>(idx.size()));
  for (int i = 0; i < rows_; ++i)
    for (size_t k = 0; k < idx.size(); ++k) out(i, static_cast<int>(k)) = (*this)(i, idx[k]);
  return out;
}

Vec Matrix::diag() const {
  int n = std::min(rows_, cols_);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = (*this)(i, i);
  return v;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix add: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + b(i, j);
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "matrix sub: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) - b(i, j);
  return out;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matrix mul: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      double* orow = out.row_ptr(i);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i, j) = s * a(i, j);
  return out;
}

Vec operator*(const Matrix& a, const Vec& v) {
  require(a.cols() == static_cast<int>(v.size()), "matrix-vector mul: shape mismatch");
  Vec out(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    const double* row = a.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += row[j] * v[j];
    out[i] = s;
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  require(a.rows() == b.rows(), "hcat: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (int j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

double dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "dot: size mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec operator+(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "vector add: size mismatch");
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec operator-(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "vector sub: size mismatch");
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec operator*(double s, const Vec& a) {
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

double quad_form(const Matrix& m, const Vec& v) {
  require(m.rows() == m.cols() && m.rows() == static_cast<int>(v.size()),
          "quad_form: shape mismatch");
  double s = 0.0;
  for (int i = 0; i < m.rows(); ++i) {
    const double* row = m.row_ptr(i);
    double r = 0.0;
    for (int j = 0; j < m.cols(); ++j) r += row[j] * v[j];
    s += v[i] * r;
  }
  return s;
}

Matrix cholesky(const Matrix& a, const std::string& context) {
  require(a.rows() == a.cols(), "cholesky: matrix not square");
  int n = a.rows();
  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::string where = context.empty() ? "matrix" : context;
      throw NumericError(where + " is not positive definite (pivot " + std::to_string(j) +
                         " non-positive); the column at index " + std::to_string(j) +
                         " is linearly dependent on earlier ones or degenerate");
    }
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

Vec chol_solve(const Matrix& l, const Vec& b) {
  int n = l.rows();
  require(static_cast<int>(b.size()) == n, "chol_solve: size mismatch");
  Vec y(n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  Vec x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

Matrix chol_solve(const Matrix& l, const Matrix& b) {
  Matrix out(b.rows(), b.cols());
  for (int j = 0; j < b.cols(); ++j) out.set_col(j, chol_solve(l, b.col(j)));
  return out;
}

Matrix chol_inverse(const Matrix& l) {
  return chol_solve(l, Matrix::identity(l.rows()));
}

Matrix spd_inverse(const Matrix& a, const std::string& context) {
  return chol_inverse(cholesky(a, context));
}

double spd_log_det(const Matrix& a, const std::string& context) {
  Matrix l = cholesky(a, context);
  double s = 0.0;
  for (int i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

EigenSym eigen_sym(const Matrix& a) {
  require(a.rows() == a.cols(), "eigen_sym: matrix not square");
  int n = a.rows();
  Matrix m = a;  // working copy, symmetrized
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double v = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = m(j, i) = v;
    }
  Matrix v = Matrix::identity(n);

  // Cyclic Jacobi: sweep all off-diagonal pairs until the off-diagonal mass
  // is negligible relative to the diagonal.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, dia = 0.0;
    for (int i = 0; i < n; ++i) {
      dia += std::abs(m(i, i));
      for (int j = i + 1; j < n; ++j) off += std::abs(m(i, j));
    }
    if (off <= 1e-15 * std::max(dia, 1e-300)) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = m(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  EigenSym out;
  out.values.resize(n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int i, int j) { return m(i, i) < m(j, j); });
  out.vectors = Matrix(n, n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = m(order[k], order[k]);
    for (int i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

Matrix sym_sqrt(const Matrix& a) {
  EigenSym e = eigen_sym(a);
  int n = a.rows();
  Matrix out(n, n);
  for (int k = 0; k < n; ++k) {
    double lam = e.values[k];
    require(lam > -1e-10 * std::abs(e.values.back()) - 1e-300,
            "sym_sqrt: matrix has a negative eigenvalue");
    double r = std::sqrt(std::max(lam, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(i, j) += r * e.vectors(i, k) * e.vectors(j, k);
  }
  return out;
}

Vec ols_solve(const Matrix& x, const Vec& y, const std::vector<std::string>& names) {
  require(x.rows() == static_cast<int>(y.size()), "ols_solve: row mismatch");
  require(x.rows() >= x.cols(), "ols_solve: fewer rows than columns");
  int p = x.cols();
  Matrix xtx(p, p);
  Vec xty(p, 0.0);
  for (int i = 0; i < x.rows(); ++i) {
    const double* row = x.row_ptr(i);
    for (int a = 0; a < p; ++a) {
      xty[a] += row[a] * y[i];
      for (int b = a; b < p; ++b) xtx(a, b) += row[a] * row[b];
    }
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) xtx(a, b) = xtx(b, a);

  Matrix l;
  try {
    l = cholesky(xtx, "design matrix normal equations");
  } catch (const NumericError& e) {
    std::string msg(e.what());
    // Pull out the failing pivot to name the design column.
    auto pos = msg.find("pivot ");
    if (pos != std::string::npos && !names.empty()) {
      int j = std::atoi(msg.c_str() + pos + 6);
      if (j >= 0 && j < static_cast<int>(names.size()))
        throw NumericError("design matrix is rank deficient at column '" + names[j] + "'");
    }
    throw;
  }
  Vec beta = chol_solve(l, xty);
  // One step of iterative refinement keeps the normal-equation residual tiny.
  Vec r = xty;
  for (int a = 0; a < p; ++a) {
    double s = 0.0;
    for (int b = 0; b < p; ++b) s += xtx(a, b) * beta[b];
    r[a] -= s;
  }
  Vec d = chol_solve(l, r);
  for (int a = 0; a < p; ++a) beta[a] += d[a];
  return beta;
}

}  // namespace clusterre
