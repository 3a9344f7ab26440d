#include "ctrlpath/kernels.hpp"

#include <atomic>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ctrlpath/errors.hpp"

namespace ctrlpath::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k = a.cols(), n = b.cols();
  double* ci = c.row(i);
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = a(i, p);
    const double* bp = b.row(p);
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void pairwise_row(const Matrix& pts, Matrix& out, std::size_t i) {
  const std::size_t n = pts.rows(), d = pts.cols();
  out(i, i) = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    double s = 0.0;
    const double* pi = pts.row(i);
    const double* pj = pts.row(j);
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = pi[c] - pj[c];
      s += diff * diff;
    }
    out(i, j) = s;
  }
}

inline void spline_grid_one(const SplinePath& path, const std::vector<double>& grid,
                            Matrix& out) {
  const std::size_t d = path.dims();
  std::vector<double> buf(path.channels());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    path.eval_into(grid[k], buf.data());
    for (std::size_t c = 0; c < d; ++c) out(k, c) = buf[c];
  }
}

void check_matmul_shapes(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dims differ");
  if (c.rows() != a.rows() || c.cols() != b.cols())
    c = Matrix(a.rows(), b.cols());
}

}  // namespace

void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul_shapes(a, b, c);
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
}

void matmul_parallel(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul_shapes(a, b, c);
  const long rows = static_cast<long>(a.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i)
    matmul_row(a, b, c, static_cast<std::size_t>(i));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  // Thread startup dwarfs the arithmetic below this size.
  if (a.rows() * a.cols() * b.cols() < 64 * 64 * 64)
    matmul_serial(a, b, c);
  else
    matmul_parallel(a, b, c);
  return c;
}

void pairwise_sq_dists_serial(const Matrix& pts, Matrix& out) {
  if (out.rows() != pts.rows() || out.cols() != pts.rows())
    out = Matrix(pts.rows(), pts.rows());
  for (std::size_t i = 0; i < pts.rows(); ++i) pairwise_row(pts, out, i);
}

void pairwise_sq_dists_parallel(const Matrix& pts, Matrix& out) {
  if (out.rows() != pts.rows() || out.cols() != pts.rows())
    out = Matrix(pts.rows(), pts.rows());
  const long n = static_cast<long>(pts.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) pairwise_row(pts, out, static_cast<std::size_t>(i));
}

Matrix pairwise_sq_dists(const Matrix& pts) {
  Matrix out;
  if (pts.rows() * pts.rows() * pts.cols() < 64 * 64 * 64)
    pairwise_sq_dists_serial(pts, out);
  else
    pairwise_sq_dists_parallel(pts, out);
  return out;
}

void spline_grid_eval_serial(const std::vector<SplinePath>& paths,
                             const std::vector<double>& grid,
                             std::vector<Matrix>& out) {
  out.resize(paths.size());
  for (std::size_t p = 0; p < paths.size(); ++p) {
    out[p] = Matrix(grid.size(), paths[p].dims());
    spline_grid_one(paths[p], grid, out[p]);
  }
}

void spline_grid_eval_parallel(const std::vector<SplinePath>& paths,
                               const std::vector<double>& grid,
                               std::vector<Matrix>& out) {
  out.resize(paths.size());
  for (std::size_t p = 0; p < paths.size(); ++p)
    out[p] = Matrix(grid.size(), paths[p].dims());
  const long n = static_cast<long>(paths.size());
#pragma omp parallel for schedule(dynamic)
  for (long p = 0; p < n; ++p)
    spline_grid_one(paths[static_cast<std::size_t>(p)], grid,
                    out[static_cast<std::size_t>(p)]);
}

std::vector<Matrix> spline_grid_eval(const std::vector<SplinePath>& paths,
                                     const std::vector<double>& grid) {
  std::vector<Matrix> out;
  if (paths.size() < 2 || paths.size() * grid.size() < 2048)
    spline_grid_eval_serial(paths, grid, out);
  else
    spline_grid_eval_parallel(paths, grid, out);
  return out;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<bool> failed{false};
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
      failed.store(true);
    }
  }
  if (failed.load())
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
}

}  // namespace ctrlpath::kernels
