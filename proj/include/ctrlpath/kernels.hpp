#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ctrlpath/linalg.hpp"
#include "ctrlpath/panel.hpp"

// Data-parallel kernels. Each kernel has a serial reference implementation
// and an OpenMP variant; every output element is computed independently, so
// the two produce bit-identical results for any thread count. The unsuffixed
// entry points dispatch on problem size. tools/bench_kernels compares them.
namespace ctrlpath::kernels {

int max_threads();

// c = a * b
void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_parallel(const Matrix& a, const Matrix& b, Matrix& c);
Matrix matmul(const Matrix& a, const Matrix& b);

// All-pairs squared Euclidean distances between rows of pts.
void pairwise_sq_dists_serial(const Matrix& pts, Matrix& out);
void pairwise_sq_dists_parallel(const Matrix& pts, Matrix& out);
Matrix pairwise_sq_dists(const Matrix& pts);

// Evaluates the value channels (time channel excluded) of each path at each
// grid time: out[p] has grid.size() rows and paths[p].dims() columns.
void spline_grid_eval_serial(const std::vector<SplinePath>& paths,
                             const std::vector<double>& grid,
                             std::vector<Matrix>& out);
void spline_grid_eval_parallel(const std::vector<SplinePath>& paths,
                               const std::vector<double>& grid,
                               std::vector<Matrix>& out);
std::vector<Matrix> spline_grid_eval(const std::vector<SplinePath>& paths,
                                     const std::vector<double>& grid);

// Runs fn(i) for i in [0, n) across threads. Iterations must write disjoint
// slots. If any iteration throws, the lowest-index exception is rethrown
// after the loop completes.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ctrlpath::kernels
