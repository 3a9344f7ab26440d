#include <doctest.h>

#include <atomic>

#include "ctrlpath/errors.hpp"
#include "ctrlpath/kernels.hpp"
#include "ctrlpath/rng.hpp"

using namespace ctrlpath;

namespace {
Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}
}  // namespace

TEST_CASE("parallel matmul is bit-identical to the serial reference") {
  const Matrix a = random_matrix(83, 47, 1);
  const Matrix b = random_matrix(47, 91, 2);
  Matrix cs, cp;
  kernels::matmul_serial(a, b, cs);
  kernels::matmul_parallel(a, b, cp);
  REQUIRE(cs.rows() == cp.rows());
  for (std::size_t i = 0; i < cs.size(); ++i) CHECK(cs.data()[i] == cp.data()[i]);
}

TEST_CASE("matmul matches a hand-computed product") {
  Matrix a(2, 3), b(3, 2);
  double av[] = {1, 2, 3, 4, 5, 6};
  double bv[] = {7, 8, 9, 10, 11, 12};
  std::copy(av, av + 6, a.data());
  std::copy(bv, bv + 6, b.data());
  const Matrix c = kernels::matmul(a, b);
  CHECK(c(0, 0) == 58.0);
  CHECK(c(0, 1) == 64.0);
  CHECK(c(1, 0) == 139.0);
  CHECK(c(1, 1) == 154.0);
}

TEST_CASE("parallel pairwise distances are bit-identical to serial") {
  const Matrix pts = random_matrix(60, 9, 3);
  Matrix ds, dp;
  kernels::pairwise_sq_dists_serial(pts, ds);
  kernels::pairwise_sq_dists_parallel(pts, dp);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.data()[i] == dp.data()[i]);
  // Symmetry and zero diagonal.
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    CHECK(ds(i, i) == 0.0);
    for (std::size_t j = 0; j < pts.rows(); ++j) CHECK(ds(i, j) == ds(j, i));
  }
}

TEST_CASE("parallel spline grid evaluation matches serial") {
  std::vector<SplinePath> paths;
  for (std::uint64_t s = 0; s < 6; ++s) {
    Rng rng(s + 10);
    std::vector<double> times;
    Matrix values(20, 2);
    for (std::size_t j = 0; j < 20; ++j) {
      times.push_back(static_cast<double>(j) + 0.3 * rng.uniform());
      values(j, 0) = rng.normal();
      values(j, 1) = rng.normal();
    }
    paths.push_back(fit_spline(times, values));
  }
  std::vector<double> grid;
  for (int k = 0; k <= 700; ++k) grid.push_back(0.02 * k);
  std::vector<Matrix> out_s, out_p;
  kernels::spline_grid_eval_serial(paths, grid, out_s);
  kernels::spline_grid_eval_parallel(paths, grid, out_p);
  REQUIRE(out_s.size() == out_p.size());
  for (std::size_t p = 0; p < out_s.size(); ++p)
    for (std::size_t i = 0; i < out_s[p].size(); ++i)
      CHECK(out_s[p].data()[i] == out_p[p].data()[i]);
}

TEST_CASE("parallel_for covers every index exactly once and rethrows") {
  std::vector<int> hits(257, 0);
  kernels::parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);

  CHECK_THROWS_AS(kernels::parallel_for(
                      8,
                      [&](std::size_t i) {
                        if (i == 3) throw ValidationError("boom");
                      }),
                  ValidationError);
}
