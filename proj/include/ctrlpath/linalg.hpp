#pragma once

#include <cstddef>
#include <vector>

namespace ctrlpath {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Solves a tridiagonal system by the Thomas algorithm. `lower` and `upper`
// have size n-1, `diag` and `rhs` size n. Throws NumericalError on a zero
// pivot.
Vector solve_tridiagonal(const Vector& lower, Vector diag, const Vector& upper,
                         Vector rhs);

// Thin SVD a = u * diag(sigma) * v^T with sigma sorted descending.
// Columns of u corresponding to zero singular values are zero.
struct Svd {
  Matrix u;      // rows(a) x k
  Vector sigma;  // k = min(rows, cols)
  Matrix v;      // cols(a) x k
};

// One-sided Jacobi orthogonalization; adequate for desk-scale matrices.
Svd jacobi_svd(Matrix a);

// Solves (a + ridge*I) x = b for symmetric positive definite a.
// Throws NumericalError if the factorization breaks down.
Vector cholesky_solve(Matrix a, Vector b, double ridge = 0.0);

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double largest_eigenvalue_sym(const Matrix& a, std::size_t iters = 300);

double dot(const double* a, const double* b, std::size_t n);
double norm2(const double* a, std::size_t n);

bool all_finite(const double* a, std::size_t n);
bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace ctrlpath
