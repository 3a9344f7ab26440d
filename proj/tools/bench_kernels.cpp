// Compares the serial reference kernels against their OpenMP variants and
// checks that outputs agree bitwise.
#include <chrono>
#include <cstdio>
#include <vector>

#include "ctrlpath/kernels.hpp"
#include "ctrlpath/panel.hpp"
#include "ctrlpath/rng.hpp"

using namespace ctrlpath;

namespace {

double time_s(const std::function<void()>& fn, int reps) {
  // One warmup, then the best of `reps`.
  fn();
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

void report(const char* name, double serial_s, double parallel_s, bool equal) {
  std::printf("%-24s serial %8.2f ms   parallel %8.2f ms   speedup %4.2fx   %s\n",
              name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              equal ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads: %d\n\n", kernels::max_threads());

  {
    const Matrix a = random_matrix(384, 384, 1);
    const Matrix b = random_matrix(384, 384, 2);
    Matrix cs, cp;
    const double ts = time_s([&] { kernels::matmul_serial(a, b, cs); }, 3);
    const double tp = time_s([&] { kernels::matmul_parallel(a, b, cp); }, 3);
    report("matmul 384x384", ts, tp, bit_equal(cs, cp));
  }

  {
    const Matrix pts = random_matrix(600, 200, 3);
    Matrix ds, dp;
    const double ts = time_s([&] { kernels::pairwise_sq_dists_serial(pts, ds); }, 3);
    const double tp = time_s([&] { kernels::pairwise_sq_dists_parallel(pts, dp); }, 3);
    report("pairwise 600x200", ts, tp, bit_equal(ds, dp));
  }

  {
    std::vector<SplinePath> paths;
    for (std::uint64_t s = 0; s < 24; ++s) {
      Rng rng(100 + s);
      std::vector<double> times;
      Matrix values(400, 1);
      for (std::size_t j = 0; j < 400; ++j) {
        times.push_back(static_cast<double>(j));
        values(j, 0) = rng.normal();
      }
      paths.push_back(fit_spline(times, values));
    }
    std::vector<double> grid;
    for (int k = 0; k < 20000; ++k) grid.push_back(399.0 * k / 19999.0);
    std::vector<Matrix> out_s, out_p;
    const double ts =
        time_s([&] { kernels::spline_grid_eval_serial(paths, grid, out_s); }, 3);
    const double tp =
        time_s([&] { kernels::spline_grid_eval_parallel(paths, grid, out_p); }, 3);
    bool equal = out_s.size() == out_p.size();
    for (std::size_t p = 0; equal && p < out_s.size(); ++p)
      equal = bit_equal(out_s[p], out_p[p]);
    report("spline eval 24x20000", ts, tp, equal);
  }

  return 0;
}
