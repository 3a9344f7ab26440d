#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ctrlpath/baselines.hpp"
#include "ctrlpath/errors.hpp"
#include "ctrlpath/kernels.hpp"
#include "ctrlpath/rng.hpp"

using namespace ctrlpath;

namespace {

// Brute-force simplex projection: enumerate all support sets, keep feasible
// equality-constrained solutions, return the closest.
Vector brute_force_simplex(const Vector& v) {
  const std::size_t n = v.size();
  Vector best;
  double best_dist = 1e300;
  for (std::size_t mask = 1; mask < (1u << n); ++mask) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        sum += v[i];
        ++count;
      }
    const double shift = (sum - 1.0) / static_cast<double>(count);
    Vector w(n, 0.0);
    bool feasible = true;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        w[i] = v[i] - shift;
        if (w[i] < -1e-12) feasible = false;
      }
    if (!feasible) continue;
    double dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) dist += (w[i] - v[i]) * (w[i] - v[i]);
    if (dist < best_dist) {
      best_dist = dist;
      best = w;
    }
  }
  return best;
}

Matrix random_controls(std::size_t n, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, f);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("project_simplex: symmetry, fixed points, brute-force oracle") {
  const Vector s = project_simplex(Vector{0.5, 0.5, 0.5});
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const Vector onit{0.2, 0.5, 0.3};
  CHECK(project_simplex(onit) == onit);

  Rng rng(17);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + rng.bounded(5);  // dims 2..6
    Vector v(n);
    for (auto& x : v) x = 3.0 * rng.normal();
    const Vector got = project_simplex(v);
    const Vector want = brute_force_simplex(v);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(got[i] - want[i]) <= 1e-6);
      CHECK(got[i] >= -1e-10);
      sum += got[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-8);
  }
}

TEST_CASE("fit_sc: vertex recovery, convex combination, feasibility") {
  SUBCASE("target equal to one control returns that vertex") {
    const Matrix c = random_controls(6, 40, 5);
    Vector target(c.row(3), c.row(3) + 40);
    const SCWeights w = fit_sc(c, target);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(std::abs(w.w[i] - (i == 3 ? 1.0 : 0.0)) <= 1e-6);
  }

  SUBCASE("exact 0.3/0.7 combination is recovered") {
    const Matrix c = random_controls(8, 60, 6);
    Vector target(60);
    for (std::size_t j = 0; j < 60; ++j)
      target[j] = 0.3 * c(0, j) + 0.7 * c(1, j);
    const SCWeights w = fit_sc(c, target);
    CHECK(std::abs(w.w[0] - 0.3) <= 1e-3);
    CHECK(std::abs(w.w[1] - 0.7) <= 1e-3);
    for (std::size_t i = 2; i < 8; ++i) CHECK(std::abs(w.w[i]) <= 1e-3);
    double sum = 0.0;
    for (double x : w.w) {
      CHECK(x >= -1e-10);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-8);
  }

  SUBCASE("objective is monotone along projected-gradient iterations") {
    // Reimplement a few iterations with the same step rule and track the
    // objective directly.
    const Matrix c = random_controls(5, 30, 7);
    Vector target(30);
    Rng rng(8);
    for (auto& t : target) t = rng.normal();
    Matrix gram(5, 5);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        gram(i, j) = dot(c.row(i), c.row(j), 30);
    const double lip = 1.05 * largest_eigenvalue_sym(gram) + 1e-12;
    Vector w(5, 0.2);
    auto objective = [&](const Vector& x) {
      double s = 0.0;
      for (std::size_t j = 0; j < 30; ++j) {
        double pred = 0.0;
        for (std::size_t i = 0; i < 5; ++i) pred += x[i] * c(i, j);
        s += (pred - target[j]) * (pred - target[j]);
      }
      return 0.5 * s;
    };
    double prev = objective(w);
    for (int it = 0; it < 200; ++it) {
      Vector grad(5, 0.0);
      for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 30; ++j) {
          double pred = 0.0;
          for (std::size_t k2 = 0; k2 < 5; ++k2) pred += w[k2] * c(k2, j);
          grad[i] += (pred - target[j]) * c(i, j);
        }
      }
      for (std::size_t i = 0; i < 5; ++i) w[i] -= grad[i] / lip;
      w = project_simplex(w);
      const double cur = objective(w);
      CHECK(cur <= prev + 1e-9);
      prev = cur;
    }
  }
}

TEST_CASE("fit_kmm_sc: concentration, bandwidth heuristic, duplicate symmetry") {
  SUBCASE("target equal to a control concentrates the weight") {
    Rng rng(11);
    Matrix c(3, 20);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
    Vector target(c.row(2), c.row(2) + 20);
    const SCWeights w = fit_kmm_sc(c, target, {});
    CHECK(w.w[2] >= 0.99);
  }

  SUBCASE("median bandwidth on {0,1,3}-spaced scalar points is 2") {
    // Units at 0 (target), 1 and 3: pairwise distances {1, 3, 2} -> median 2.
    Matrix c(2, 1);
    c(0, 0) = 1.0;
    c(1, 0) = 3.0;
    const Vector target{0.0};
    const SCWeights w = fit_kmm_sc(c, target, {});
    CHECK(w.diagnostics.at("bandwidth") == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("duplicated control splits weight but keeps the sum") {
    Rng rng(12);
    Matrix base(3, 25);
    for (std::size_t i = 0; i < base.size(); ++i) base.data()[i] = rng.normal();
    Vector target(25);
    for (std::size_t j = 0; j < 25; ++j)
      target[j] = 0.6 * base(0, j) + 0.4 * base(1, j);

    const SCWeights w3 = fit_kmm_sc(base, target, {});

    Matrix dup(4, 25);
    for (std::size_t j = 0; j < 25; ++j) {
      dup(0, j) = base(0, j);
      dup(1, j) = base(1, j);
      dup(2, j) = base(2, j);
      dup(3, j) = base(0, j);  // duplicate of control 0
    }
    const SCWeights w4 = fit_kmm_sc(dup, target, {});
    CHECK(std::abs((w4.w[0] + w4.w[3]) - w3.w[0]) <= 1e-4);
    CHECK(std::abs(w4.w[1] - w3.w[1]) <= 1e-4);
  }

  SUBCASE("weights respect the box and the sum band") {
    const Matrix c = random_controls(7, 30, 21);
    Vector target(30);
    Rng rng(22);
    for (auto& t : target) t = rng.normal();
    KMMConfig cfg;
    const SCWeights w = fit_kmm_sc(c, target, cfg);
    double sum = 0.0;
    for (double x : w.w) {
      CHECK(x >= -1e-10);
      CHECK(x <= cfg.upper_bound + 1e-10);
      sum += x;
    }
    CHECK(sum >= 1.0 - cfg.eps_sum - 1e-8);
    CHECK(sum <= 1.0 + cfg.eps_sum + 1e-8);
  }
}

TEST_CASE("elastic net: OLS limit, closed-form lasso, support recovery") {
  SUBCASE("lambda = 0 on a tall full-rank system reproduces OLS") {
    Rng rng(31);
    Matrix c(3, 50);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
    const Vector beta_true{1.5, -2.0, 0.5};
    Vector target(50);
    for (std::size_t j = 0; j < 50; ++j) {
      target[j] = 0.7;  // intercept
      for (std::size_t i = 0; i < 3; ++i) target[j] += beta_true[i] * c(i, j);
    }
    const SCWeights w = elastic_net_fit(c, target, 0.5, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(std::abs(w.w[i] - beta_true[i]) <= 1e-6);
    CHECK(std::abs(w.intercept - 0.7) <= 1e-6);
  }

  SUBCASE("1-d lasso path matches the soft-threshold closed form") {
    Rng rng(32);
    const std::size_t n = 40;
    Matrix c(1, n);
    Vector y(n);
    for (std::size_t j = 0; j < n; ++j) {
      c(0, j) = rng.normal();
      y[j] = 2.0 * c(0, j) + 0.1 * rng.normal();
    }
    // Center as the solver does.
    double xm = 0.0, ym = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      xm += c(0, j);
      ym += y[j];
    }
    xm /= n;
    ym /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sxx += (c(0, j) - xm) * (c(0, j) - xm);
      sxy += (c(0, j) - xm) * (y[j] - ym);
    }
    for (const double lambda : {0.0, 0.05, 0.2, 1.0}) {
      const SCWeights w = elastic_net_fit(c, y, 1.0, lambda);
      const double rho = sxy / static_cast<double>(n);
      const double z = sxx / static_cast<double>(n);
      double expect = 0.0;
      if (rho > lambda)
        expect = (rho - lambda) / z;
      else if (rho < -lambda)
        expect = (rho + lambda) / z;
      CHECK(std::abs(w.w[0] - expect) <= 1e-8);
    }
  }

  SUBCASE("fit_rsc recovers an exact sparse combination's support") {
    Rng rng(33);
    Matrix c(20, 80);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
    Vector target(80);
    for (std::size_t j = 0; j < 80; ++j)
      target[j] = 1.2 * c(4, j) - 0.8 * c(11, j);
    const SCWeights w = fit_rsc(c, target);
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < 20; ++i)
      if (std::abs(w.w[i]) > 1e-3) support.push_back(i);
    CHECK(support == std::vector<std::size_t>{4, 11});
  }

  SUBCASE("too few columns for cross-validation is an error") {
    const Matrix c = random_controls(3, 4, 3);
    CHECK_THROWS_AS(fit_rsc(c, Vector{1, 2, 3, 4}), ValidationError);
  }
}

TEST_CASE("soft-impute: threshold arithmetic, recovery, full shrinkage") {
  SUBCASE("rank-1 singular value shrinks by mu in one step") {
    // 4x4 rank-1 with sigma = 5: outer product of unit vectors scaled.
    Vector u{0.5, 0.5, 0.5, 0.5}, v{0.5, -0.5, 0.5, -0.5};
    Matrix a(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) a(i, j) = 5.0 * u[i] * v[j];
    MCConfig cfg;
    cfg.mu = 2.0;
    cfg.max_iters = 1;
    const MCModel m = fit_mc_sc(a, std::vector<bool>(16, true), cfg);
    const Svd svd = jacobi_svd(m.completed);
    CHECK(svd.sigma[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(m.rank == 1);
  }

  SUBCASE("rank-2 10x30 matrix with 30% mask is recovered to 1e-2") {
    // Completion hardness varies with the factors' coherence; this seed gives
    // a representative well-conditioned instance.
    Rng rng(41);
    Matrix a(10, 30, 0.0);
    Vector u1(10), u2(10), v1(30), v2(30);
    for (auto& x : u1) x = rng.normal();
    for (auto& x : u2) x = rng.normal();
    for (auto& x : v1) x = rng.normal();
    for (auto& x : v2) x = rng.normal();
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 30; ++j)
        a(i, j) = 2.0 * u1[i] * v1[j] + 1.0 * u2[i] * v2[j];

    std::vector<bool> observed(300, true);
    std::size_t masked = 0;
    Rng mask_rng(42);
    while (masked < 90) {
      const std::size_t k = mask_rng.bounded(300);
      if (observed[k]) {
        observed[k] = false;
        ++masked;
      }
    }
    MCConfig cfg;  // auto mu on the warm-started path, default budgets
    cfg.seed = 9;
    const MCModel m = fit_mc_sc(a, observed, cfg);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 300; ++i) {
      const double diff = m.completed.data()[i] - a.data()[i];
      num += diff * diff;
      den += a.data()[i] * a.data()[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-2);
  }

  SUBCASE("mu beyond the top singular value shrinks everything to zero") {
    Rng rng(46);
    Matrix a(5, 8);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    const Svd svd = jacobi_svd(a);
    MCConfig cfg;
    cfg.mu = svd.sigma[0] * 10.0;
    const MCModel m = fit_mc_sc(a, std::vector<bool>(40, true), cfg);
    for (std::size_t i = 0; i < m.completed.size(); ++i)
      CHECK(m.completed.data()[i] == 0.0);
    CHECK(m.rank == 0);
  }

  SUBCASE("soft-impute objective is non-increasing across iterations") {
    Rng rng(47);
    Matrix a(6, 9);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    std::vector<bool> observed(54, true);
    for (std::size_t k = 0; k < 12; ++k) observed[rng.bounded(54)] = false;
    const double mu = 0.8;
    double prev = 1e300;
    for (std::size_t iters = 1; iters <= 12; ++iters) {
      MCConfig cfg;
      cfg.mu = mu;
      cfg.max_iters = iters;
      cfg.tol = 0.0;  // run exactly `iters` iterations
      const MCModel m = fit_mc_sc(a, observed, cfg);
      double fit_term = 0.0;
      for (std::size_t i = 0; i < 54; ++i)
        if (observed[i]) {
          const double diff = a.data()[i] - m.completed.data()[i];
          fit_term += diff * diff;
        }
      const Svd s = jacobi_svd(m.completed);
      double nuc = 0.0;
      for (double sv : s.sigma) nuc += sv;
      const double obj = 0.5 * fit_term + mu * nuc;
      CHECK(obj <= prev + 1e-8);
      prev = obj;
    }
  }
}

TEST_CASE("align_panel and predict_baseline plumbing") {
  std::vector<double> grid{0, 1, 2, 3, 4};
  Panel p;
  p.dims = 1;
  p.treatment_time = 2.5;
  auto mk = [&](const std::string& id, std::vector<double> vals) {
    UnitSeries u;
    u.unit_id = id;
    u.times = grid;
    u.values = Matrix(5, 1);
    for (std::size_t j = 0; j < 5; ++j) u.values(j, 0) = vals[j];
    return u;
  };
  p.units.push_back(mk("t", {1, 2, 3, 4, 5}));
  p.units.push_back(mk("a", {2, 4, 6, 8, 10}));   // affine
  p.units.push_back(mk("b", {5, 4, 3, 2, 1}));
  p.finalize();

  const Vector g(grid.begin(), grid.end());
  const auto aligned = align_panel(p, g);
  REQUIRE(aligned.size() == 3);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(std::abs(aligned[u](k, 0) - p.units[u].values(k, 0)) <= 1e-12);

  // Affine unit evaluated off-grid stays exact.
  const auto fine = align_panel(p, Vector{0.5, 1.5, 3.25});
  CHECK(std::abs(fine[1](0, 0) - 3.0) <= 1e-10);
  CHECK(std::abs(fine[1](2, 0) - 8.5) <= 1e-10);

  SUBCASE("w = e_k returns control k's row exactly") {
    SCWeights w;
    w.method = "sc";
    w.w = {0.0, 1.0};
    const Matrix pred = predict_baseline(w, aligned, g, Vector{1.0, 3.0});
    CHECK(pred(0, 0) == aligned[2](1, 0));
    CHECK(pred(1, 0) == aligned[2](3, 0));
  }

  SUBCASE("sc weights on exact-combination data give zero error") {
    Matrix controls = stack_controls(aligned, g, 2.5);
    Vector target = stack_treated(aligned, g, 2.5);
    // treated = 1/3 * a + 2/3 * b + nothing else? Construct exact case:
    Panel q = p;
    for (std::size_t j = 0; j < 5; ++j)
      q.treated().values(j, 0) =
          0.25 * q.units[1].values(j, 0) + 0.75 * q.units[2].values(j, 0);
    q.finalize();
    const auto aq = align_panel(q, g);
    controls = stack_controls(aq, g, 2.5);
    target = stack_treated(aq, g, 2.5);
    const SCWeights w = fit_sc(controls, target);
    const Matrix pred = predict_baseline(w, aq, g, g);
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(std::abs(pred(k, 0) - q.treated().values(k, 0)) <= 1e-6);
  }

  SUBCASE("off-grid prediction time is an error") {
    SCWeights w;
    w.method = "sc";
    w.w = {0.5, 0.5};
    CHECK_THROWS_AS(predict_baseline(w, aligned, g, Vector{1.17}), ValidationError);
  }

  SUBCASE("mc with no mask and mu = 0 returns the original row") {
    Matrix full(3, 5);
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t k = 0; k < 5; ++k) full(u, k) = aligned[u](k, 0);
    MCConfig cfg;
    cfg.mu = 0.0;
    const MCModel m = fit_mc_sc(full, std::vector<bool>(15, true), cfg);
    const Matrix pred = predict_baseline(m, g, g, 1);
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(std::abs(pred(k, 0) - p.treated().values(k, 0)) <= 1e-9);
  }

  CHECK_THROWS_AS(align_panel(p, Vector{}), ValidationError);
}

TEST_CASE("kmm with B=1 and tiny band approaches the sc solution") {
  // Small instance where the kernel is nearly linear: large bandwidth makes
  // exp(-d/2s^2) ~ 1 - d/2s^2, an affine function of the squared distances.
  Rng rng(60);
  Matrix c(4, 30);
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
  Vector target(30);
  for (std::size_t j = 0; j < 30; ++j)
    target[j] = 0.5 * c(0, j) + 0.5 * c(2, j);

  const SCWeights sc = fit_sc(c, target);
  KMMConfig cfg;
  cfg.bandwidth = 200.0;  // near-linear regime
  cfg.eps_sum = 1e-4;
  cfg.max_iters = 400000;
  cfg.tol = 1e-13;
  const SCWeights kmm = fit_kmm_sc(c, target, cfg);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(kmm.w[i] - sc.w[i]) <= 1e-3);
}
