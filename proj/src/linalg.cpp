#include "ctrlpath/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctrlpath/errors.hpp"

namespace ctrlpath {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm2(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

bool all_finite(const double* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

bool all_finite(const Vector& v) { return all_finite(v.data(), v.size()); }
bool all_finite(const Matrix& m) { return all_finite(m.data(), m.size()); }

Vector solve_tridiagonal(const Vector& lower, Vector diag, const Vector& upper,
                         Vector rhs) {
  const std::size_t n = diag.size();
  if (rhs.size() != n || (n > 0 && (lower.size() != n - 1 || upper.size() != n - 1)))
    throw ValidationError("solve_tridiagonal: inconsistent band sizes");
  if (n == 0) return {};
  for (std::size_t i = 1; i < n; ++i) {
    if (diag[i - 1] == 0.0) throw NumericalError("solve_tridiagonal: zero pivot");
    const double w = lower[i - 1] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  if (diag[n - 1] == 0.0) throw NumericalError("solve_tridiagonal: zero pivot");
  Vector x(n);
  x[n - 1] = rhs[n - 1] / diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;)
    x[i] = (rhs[i] - upper[i] * x[i + 1]) / diag[i];
  return x;
}

namespace {

// Hestenes one-sided Jacobi on a matrix with rows >= cols: rotates column
// pairs until all are mutually orthogonal, accumulating rotations in v.
void orthogonalize_columns(Matrix& b, Matrix& v) {
  const std::size_t m = b.rows(), n = b.cols();
  const double tol = 1e-14;
  const std::size_t max_sweeps = 60;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          app += bp * bp;
          aqq += bq * bq;
          apq += bp * bq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

}  // namespace

Svd jacobi_svd(Matrix a) {
  const bool transposed = a.rows() < a.cols();
  if (transposed) {
    Matrix at(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) at(j, i) = a(i, j);
    a = std::move(at);
  }
  const std::size_t m = a.rows(), n = a.cols();
  Matrix v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  orthogonalize_columns(a, v);

  Vector sigma(n);
  Matrix u(m, n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    s = std::sqrt(s);
    sigma[j] = s;
    if (s > 0.0)
      for (std::size_t i = 0; i < m; ++i) u(i, j) = a(i, j) / s;
  }

  // Sort singular values descending, permuting u and v columns to match.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });
  Svd out;
  out.sigma.resize(n);
  out.u = Matrix(m, n);
  out.v = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = sigma[src];
    for (std::size_t i = 0; i < m; ++i) out.u(i, j) = u(i, src);
    for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
  }
  if (transposed) std::swap(out.u, out.v);
  return out;
}

Vector cholesky_solve(Matrix a, Vector b, double ridge) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n)
    throw ValidationError("cholesky_solve: shape mismatch");
  for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
  // In-place lower Cholesky.
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw NumericalError("cholesky_solve: matrix not positive definite");
    const double l = std::sqrt(d);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  // Forward then backward substitution.
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
    b[i] = s / a(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
    b[i] = s / a(i, i);
  }
  return b;
}

double largest_eigenvalue_sym(const Matrix& a, std::size_t iters) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ValidationError("largest_eigenvalue_sym: not square");
  if (n == 0) return 0.0;
  Vector v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Vector av(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) av[i] = dot(a.row(i), v.data(), n);
    const double nrm = norm2(av.data(), n);
    if (nrm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = av[i] / nrm;
    const double next = nrm;
    if (it > 10 && std::abs(next - lambda) <= 1e-12 * std::max(1.0, next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

}  // namespace ctrlpath
