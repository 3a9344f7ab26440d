#include "ctrlpath/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "ctrlpath/errors.hpp"
#include "ctrlpath/kernels.hpp"
#include "ctrlpath/rng.hpp"

namespace ctrlpath {

std::vector<Matrix> align_panel(const Panel& panel, const Vector& grid) {
  if (grid.empty()) throw ValidationError("align_panel: empty grid");
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    if (!(grid[k] < grid[k + 1]))
      throw ValidationError("align_panel: grid not strictly ascending");
  std::vector<SplinePath> paths;
  paths.reserve(panel.units.size());
  for (const auto& u : panel.units) paths.push_back(fit_spline(u));
  return kernels::spline_grid_eval(paths, grid);
}

Vector project_simplex(const Vector& v) {
  if (v.empty()) throw ValidationError("project_simplex: empty vector");
  if (!all_finite(v)) throw ValidationError("project_simplex: non-finite input");
  Vector u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0;
  double theta = 0.0;
  std::size_t rho = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double candidate = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) {
      rho = j + 1;
      theta = candidate;
    }
  }
  (void)rho;
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

Matrix stack_controls(const std::vector<Matrix>& aligned, const Vector& grid,
                      double t_limit) {
  if (aligned.size() < 2) throw ValidationError("stack_controls: need controls");
  std::size_t n_pre = 0;
  while (n_pre < grid.size() && grid[n_pre] < t_limit) ++n_pre;
  if (n_pre == 0) throw ValidationError("stack_controls: no pre-treatment columns");
  const std::size_t d = aligned[0].cols();
  Matrix out(aligned.size() - 1, n_pre * d);
  for (std::size_t i = 1; i < aligned.size(); ++i)
    for (std::size_t k = 0; k < n_pre; ++k)
      for (std::size_t c = 0; c < d; ++c)
        out(i - 1, k * d + c) = aligned[i](k, c);
  return out;
}

Vector stack_treated(const std::vector<Matrix>& aligned, const Vector& grid,
                     double t_limit) {
  std::size_t n_pre = 0;
  while (n_pre < grid.size() && grid[n_pre] < t_limit) ++n_pre;
  if (n_pre == 0) throw ValidationError("stack_treated: no pre-treatment columns");
  const std::size_t d = aligned[0].cols();
  Vector out(n_pre * d);
  for (std::size_t k = 0; k < n_pre; ++k)
    for (std::size_t c = 0; c < d; ++c) out[k * d + c] = aligned[0](k, c);
  return out;
}

// ---------------------------------------------------------------------------
// SC: projected gradient on the simplex

SCWeights fit_sc(const Matrix& controls, const Vector& target) {
  const std::size_t n = controls.rows();
  const std::size_t f = controls.cols();
  if (n == 0 || f == 0 || target.size() != f)
    throw ValidationError("fit_sc: shape mismatch");

  // Gram matrix G = C C^T; gradient of 1/2 ||y - C^T w||^2 is G w - C y.
  Matrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double s = dot(controls.row(i), controls.row(j), f);
      gram(i, j) = s;
      gram(j, i) = s;
    }
  Vector cy(n);
  for (std::size_t i = 0; i < n; ++i) cy[i] = dot(controls.row(i), target.data(), f);

  const double lip = 1.05 * largest_eigenvalue_sym(gram) + 1e-12;
  Vector w(n, 1.0 / static_cast<double>(n));
  Vector grad(n), next(n);
  const std::size_t max_iters = 50000;
  const double tol = 1e-8;
  double gap = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      grad[i] = dot(gram.row(i), w.data(), n) - cy[i];
    for (std::size_t i = 0; i < n; ++i) next[i] = w[i] - grad[i] / lip;
    next = project_simplex(next);
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dlt = next[i] - w[i];
      diff += dlt * dlt;
    }
    gap = std::sqrt(diff);  // gradient-mapping step norm
    w = next;
    if (gap <= tol) break;
  }
  if (gap > 1e-5)
    std::cerr << "fit_sc: projected gradient stopped at mapping norm " << gap
              << " after " << it << " iterations\n";

  SCWeights out;
  out.w = std::move(w);
  out.method = "sc";
  out.diagnostics["iterations"] = static_cast<double>(std::min(it + 1, max_iters));
  out.diagnostics["gradient_mapping_norm"] = gap;
  out.diagnostics["converged"] = gap <= tol ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// KMM-SC

namespace {

// Euclidean projection onto {w : 0 <= w <= B} intersected with
// {w : |sum w - 1| <= eps} by Dykstra's alternating projections.
Vector project_box_band(const Vector& v, double upper, double eps) {
  const std::size_t n = v.size();
  Vector x = v, p(n, 0.0), q(n, 0.0);
  for (std::size_t iter = 0; iter < 500; ++iter) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = std::clamp(x[i] + p[i], 0.0, upper);
      p[i] = x[i] + p[i] - y;
      change += std::abs(y - x[i]);
      x[i] = y;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += x[i] + q[i];
    double shiftv = 0.0;
    if (sum > 1.0 + eps) shiftv = (sum - (1.0 + eps)) / static_cast<double>(n);
    if (sum < 1.0 - eps) shiftv = (sum - (1.0 - eps)) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = x[i] + q[i] - shiftv;
      q[i] = x[i] + q[i] - y;
      change += std::abs(y - x[i]);
      x[i] = y;
    }
    if (change <= 1e-13) break;
  }
  return x;
}

double gaussian_kernel(const double* a, const double* b, std::size_t n,
                       double bandwidth) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::exp(-s / (2.0 * bandwidth * bandwidth));
}

}  // namespace

SCWeights fit_kmm_sc(const Matrix& controls, const Vector& target,
                     const KMMConfig& config) {
  const std::size_t n = controls.rows();
  const std::size_t f = controls.cols();
  if (n == 0 || f == 0 || target.size() != f)
    throw ValidationError("fit_kmm_sc: shape mismatch");

  double bandwidth = config.bandwidth;
  if (!(bandwidth > 0.0)) {
    // Median pairwise distance over all units, treated included.
    Matrix pts(n + 1, f);
    std::copy(target.begin(), target.end(), pts.row(0));
    for (std::size_t i = 0; i < n; ++i)
      std::copy(controls.row(i), controls.row(i) + f, pts.row(i + 1));
    const Matrix d2 = kernels::pairwise_sq_dists(pts);
    Vector dists;
    for (std::size_t i = 0; i + 1 < pts.rows(); ++i)
      for (std::size_t j = i + 1; j < pts.rows(); ++j)
        dists.push_back(std::sqrt(d2(i, j)));
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size();
    bandwidth = m % 2 == 1 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    if (!(bandwidth > 0.0)) bandwidth = 1.0;
  }

  Matrix kmat(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = gaussian_kernel(controls.row(i), controls.row(j), f, bandwidth);
      kmat(i, j) = v;
      kmat(j, i) = v;
    }
  Vector kappa(n);
  for (std::size_t i = 0; i < n; ++i)
    kappa[i] = gaussian_kernel(controls.row(i), target.data(), f, bandwidth);

  {
    // PSD sanity check with a small jitter.
    Matrix jittered = kmat;
    for (std::size_t i = 0; i < n; ++i) jittered(i, i) += 1e-10;
    try {
      cholesky_solve(jittered, Vector(n, 0.0));
    } catch (const NumericalError&) {
      throw NumericalError("fit_kmm_sc: kernel matrix not PSD after jitter");
    }
  }

  // Objective w^T K w - 2 kappa^T w on the box/band feasible set.
  const double lip = 2.0 * (1.05 * largest_eigenvalue_sym(kmat) + 1e-12);
  Vector w(n, 1.0 / static_cast<double>(n));
  Vector grad(n), next(n);
  double gap = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < config.max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      grad[i] = 2.0 * (dot(kmat.row(i), w.data(), n) - kappa[i]);
    for (std::size_t i = 0; i < n; ++i) next[i] = w[i] - grad[i] / lip;
    next = project_box_band(next, config.upper_bound, config.eps_sum);
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dlt = next[i] - w[i];
      diff += dlt * dlt;
    }
    gap = std::sqrt(diff);
    w = next;
    if (gap <= config.tol) break;
  }

  SCWeights out;
  out.w = std::move(w);
  out.method = "kmm";
  out.diagnostics["iterations"] = static_cast<double>(std::min(it + 1, config.max_iters));
  out.diagnostics["gradient_mapping_norm"] = gap;
  out.diagnostics["bandwidth"] = bandwidth;
  out.diagnostics["upper_bound"] = config.upper_bound;
  out.diagnostics["eps_sum"] = config.eps_sum;
  return out;
}

// ---------------------------------------------------------------------------
// R-SC: elastic net with cross-validated hyperparameters

namespace {

struct CenteredProblem {
  Matrix x;  // samples x predictors, centered columns
  Vector y;  // centered
  Vector x_mean, col_ss;
  double y_mean = 0.0;
};

// rows of `controls` are predictors; samples run over stacked (time, dim).
CenteredProblem center_problem(const Matrix& controls, const Vector& target,
                               const std::vector<std::size_t>& samples) {
  const std::size_t p = controls.rows();
  const std::size_t ns = samples.size();
  CenteredProblem prob;
  prob.x = Matrix(ns, p);
  prob.y.resize(ns);
  prob.x_mean.assign(p, 0.0);
  prob.col_ss.assign(p, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    prob.y[s] = target[samples[s]];
    prob.y_mean += prob.y[s];
    for (std::size_t j = 0; j < p; ++j) {
      prob.x(s, j) = controls(j, samples[s]);
      prob.x_mean[j] += prob.x(s, j);
    }
  }
  prob.y_mean /= static_cast<double>(ns);
  for (std::size_t j = 0; j < p; ++j) prob.x_mean[j] /= static_cast<double>(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    prob.y[s] -= prob.y_mean;
    for (std::size_t j = 0; j < p; ++j) {
      prob.x(s, j) -= prob.x_mean[j];
      prob.col_ss[j] += prob.x(s, j) * prob.x(s, j);
    }
  }
  return prob;
}

Vector coordinate_descent(const CenteredProblem& prob, double alpha_mix,
                          double lambda_en, std::size_t max_sweeps = 10000,
                          double tol = 1e-10) {
  const std::size_t ns = prob.y.size();
  const std::size_t p = prob.x_mean.size();
  const double n_inv = 1.0 / static_cast<double>(ns);
  Vector w(p, 0.0);
  Vector resid = prob.y;  // y - X w
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double denom = prob.col_ss[j] * n_inv + lambda_en * (1.0 - alpha_mix);
      if (denom <= 0.0) continue;
      double rho = 0.0;
      for (std::size_t s = 0; s < ns; ++s) rho += prob.x(s, j) * resid[s];
      rho = rho * n_inv + prob.col_ss[j] * n_inv * w[j];
      const double thr = lambda_en * alpha_mix;
      double wj = 0.0;
      if (rho > thr)
        wj = (rho - thr) / denom;
      else if (rho < -thr)
        wj = (rho + thr) / denom;
      const double delta = wj - w[j];
      if (delta != 0.0) {
        for (std::size_t s = 0; s < ns; ++s) resid[s] -= prob.x(s, j) * delta;
        w[j] = wj;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta <= tol) break;
  }
  return w;
}

}  // namespace

SCWeights elastic_net_fit(const Matrix& controls, const Vector& target,
                          double alpha_mix, double lambda_en) {
  if (controls.rows() == 0 || controls.cols() != target.size())
    throw ValidationError("elastic_net_fit: shape mismatch");
  std::vector<std::size_t> all(target.size());
  std::iota(all.begin(), all.end(), 0);
  const CenteredProblem prob = center_problem(controls, target, all);
  Vector w = coordinate_descent(prob, alpha_mix, lambda_en);
  double intercept = prob.y_mean;
  for (std::size_t j = 0; j < w.size(); ++j) intercept -= w[j] * prob.x_mean[j];
  SCWeights out;
  out.w = std::move(w);
  out.method = "rsc";
  out.intercept = intercept;
  out.diagnostics["alpha_mix"] = alpha_mix;
  out.diagnostics["lambda_en"] = lambda_en;
  return out;
}

SCWeights fit_rsc(const Matrix& controls, const Vector& target) {
  const std::size_t ns = target.size();
  if (ns < 5)
    throw ValidationError("fit_rsc: need at least 5 pre-treatment columns");

  std::size_t folds = 5;
  if (ns / folds < 1) {
    folds = std::max<std::size_t>(2, ns / 2);
    std::cerr << "fit_rsc: reducing CV folds to " << folds << "\n";
  }

  const Vector alphas{0.1, 0.5, 0.9};
  Vector lambdas(20);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const double e = -4.0 + 5.0 * static_cast<double>(i) /
                                static_cast<double>(lambdas.size() - 1);
    lambdas[i] = std::pow(10.0, e);
  }

  // Contiguous folds keep the selection deterministic.
  std::vector<std::vector<std::size_t>> fold_of(folds);
  for (std::size_t s = 0; s < ns; ++s) fold_of[s % folds].push_back(s);

  double best_err = std::numeric_limits<double>::infinity();
  double best_alpha = alphas[0], best_lambda = lambdas[0];
  for (const double alpha : alphas) {
    for (const double lambda : lambdas) {
      double err = 0.0;
      std::size_t count = 0;
      for (std::size_t kf = 0; kf < folds; ++kf) {
        std::vector<std::size_t> train;
        for (std::size_t other = 0; other < folds; ++other)
          if (other != kf)
            train.insert(train.end(), fold_of[other].begin(), fold_of[other].end());
        std::sort(train.begin(), train.end());
        const CenteredProblem prob = center_problem(controls, target, train);
        const Vector w = coordinate_descent(prob, alpha, lambda);
        double intercept = prob.y_mean;
        for (std::size_t j = 0; j < w.size(); ++j) intercept -= w[j] * prob.x_mean[j];
        for (const std::size_t s : fold_of[kf]) {
          double pred = intercept;
          for (std::size_t j = 0; j < w.size(); ++j) pred += w[j] * controls(j, s);
          const double r = pred - target[s];
          err += r * r;
          ++count;
        }
      }
      err /= static_cast<double>(count);
      if (err < best_err) {
        best_err = err;
        best_alpha = alpha;
        best_lambda = lambda;
      }
    }
  }

  SCWeights out = elastic_net_fit(controls, target, best_alpha, best_lambda);
  out.diagnostics["cv_mse"] = best_err;
  out.diagnostics["cv_folds"] = static_cast<double>(folds);
  return out;
}

// ---------------------------------------------------------------------------
// MC-SC: soft-impute

namespace {

struct SoftImputeRun {
  Matrix completed;
  std::size_t rank = 0;
  std::size_t iterations = 0;
};

// One soft-impute solve at fixed mu, warm-started from x.
SoftImputeRun soft_impute(const Matrix& full, const std::vector<bool>& observed,
                          double mu, double tol, std::size_t max_iters,
                          Matrix x = {}) {
  const std::size_t r = full.rows(), c = full.cols();
  if (x.rows() != r || x.cols() != c) x = Matrix(r, c, 0.0);
  Matrix work(r, c);
  SoftImputeRun run;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < r * c; ++i)
      work.data()[i] = observed[i] ? full.data()[i] : x.data()[i];
    Svd svd = jacobi_svd(work);
    std::size_t rank = 0;
    for (auto& s : svd.sigma) {
      s = std::max(s - mu, 0.0);
      if (s > 0.0) ++rank;
    }
    // x_new = u * diag(sigma') * v^T
    Matrix us = svd.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= svd.sigma[j];
    Matrix vt(svd.v.cols(), svd.v.rows());
    for (std::size_t i = 0; i < svd.v.rows(); ++i)
      for (std::size_t j = 0; j < svd.v.cols(); ++j) vt(j, i) = svd.v(i, j);
    Matrix x_new = kernels::matmul(us, vt);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < r * c; ++i) {
      const double diff = x_new.data()[i] - x.data()[i];
      num += diff * diff;
      den += x.data()[i] * x.data()[i];
    }
    x = std::move(x_new);
    run.rank = rank;
    run.iterations = iter + 1;
    if (std::sqrt(num) <= tol * std::max(std::sqrt(den), 1e-12)) break;
  }
  run.completed = std::move(x);
  return run;
}

}  // namespace

MCModel fit_mc_sc(const Matrix& full, const std::vector<bool>& observed,
                  const MCConfig& config) {
  if (observed.size() != full.size())
    throw ValidationError("fit_mc_sc: mask size mismatch");
  if (full.rows() == 0 || full.cols() == 0)
    throw ValidationError("fit_mc_sc: empty matrix");
  if (!all_finite(full)) throw ValidationError("fit_mc_sc: non-finite entries");

  const Vector fractions{0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001};

  double mu = config.mu;
  std::size_t stop_at = fractions.size();
  if (!(mu >= 0.0)) {
    // Hold out a random tenth of the observed cells and pick the shrinkage
    // with the best held-out reconstruction error, sweeping a warm-started
    // descending-mu path as in standard soft-impute practice.
    std::vector<std::size_t> obs_idx;
    for (std::size_t i = 0; i < observed.size(); ++i)
      if (observed[i]) obs_idx.push_back(i);
    Rng rng(derive_seed(config.seed, 0x5e1ec7ULL));
    const std::size_t n_hold = std::max<std::size_t>(1, obs_idx.size() / 10);
    for (std::size_t k = 0; k < n_hold; ++k) {
      const std::size_t j = k + rng.bounded(obs_idx.size() - k);
      std::swap(obs_idx[k], obs_idx[j]);
    }
    std::vector<bool> train_mask = observed;
    for (std::size_t k = 0; k < n_hold; ++k) train_mask[obs_idx[k]] = false;

    Matrix filled(full.rows(), full.cols(), 0.0);
    for (std::size_t i = 0; i < full.size(); ++i)
      if (train_mask[i]) filled.data()[i] = full.data()[i];
    const Svd svd0 = jacobi_svd(filled);
    const double sigma_max = svd0.sigma.empty() ? 1.0 : svd0.sigma[0];

    double best_err = std::numeric_limits<double>::infinity();
    mu = fractions[0] * sigma_max;
    Matrix warm;
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const double cand = fractions[f] * sigma_max;
      const SoftImputeRun run = soft_impute(full, train_mask, cand, config.tol,
                                            config.max_iters, std::move(warm));
      warm = run.completed;
      double err = 0.0;
      for (std::size_t k = 0; k < n_hold; ++k) {
        const std::size_t i = obs_idx[k];
        const double diff = run.completed.data()[i] - full.data()[i];
        err += diff * diff;
      }
      if (err < best_err) {
        best_err = err;
        mu = cand;
        stop_at = f + 1;
      }
    }
  }

  // Final solve on all observed cells; when mu was selected automatically,
  // descend the warm-started path down to it.
  SoftImputeRun run;
  if (config.mu >= 0.0) {
    run = soft_impute(full, observed, mu, config.tol, config.max_iters);
  } else {
    Matrix filled(full.rows(), full.cols(), 0.0);
    for (std::size_t i = 0; i < full.size(); ++i)
      if (observed[i]) filled.data()[i] = full.data()[i];
    const double sigma_max = jacobi_svd(filled).sigma[0];
    Matrix warm;
    for (std::size_t f = 0; f < stop_at; ++f) {
      run = soft_impute(full, observed, fractions[f] * sigma_max, config.tol,
                        config.max_iters, std::move(warm));
      warm = run.completed;
    }
    run.completed = std::move(warm);
    mu = fractions[stop_at - 1] * sigma_max;
  }
  MCModel out;
  out.completed = run.completed;
  out.mu = mu;
  out.rank = run.rank;
  out.iterations = run.iterations;
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {
std::size_t grid_index(const Vector& grid, double t) {
  const auto it = std::lower_bound(grid.begin(), grid.end(), t - 1e-9);
  if (it == grid.end() || std::abs(*it - t) > 1e-9 * std::max(1.0, std::abs(t)))
    throw ValidationError("predict_baseline: time " + std::to_string(t) +
                          " not on the aligned grid");
  return static_cast<std::size_t>(it - grid.begin());
}
}  // namespace

Matrix predict_baseline(const SCWeights& fit, const std::vector<Matrix>& aligned,
                        const Vector& grid, const Vector& times) {
  if (aligned.size() != fit.w.size() + 1)
    throw ValidationError("predict_baseline: weight/unit count mismatch");
  const std::size_t d = aligned[0].cols();
  Matrix out(times.size(), d);
  for (std::size_t j = 0; j < times.size(); ++j) {
    const std::size_t k = grid_index(grid, times[j]);
    for (std::size_t c = 0; c < d; ++c) {
      double v = fit.method == "rsc" ? fit.intercept : 0.0;
      for (std::size_t i = 0; i < fit.w.size(); ++i)
        v += fit.w[i] * aligned[i + 1](k, c);
      out(j, c) = v;
    }
  }
  return out;
}

Matrix predict_baseline(const MCModel& fit, const Vector& grid,
                        const Vector& times, std::size_t d) {
  if (fit.completed.cols() != grid.size() * d)
    throw ValidationError("predict_baseline: completed matrix/grid mismatch");
  Matrix out(times.size(), d);
  for (std::size_t j = 0; j < times.size(); ++j) {
    const std::size_t k = grid_index(grid, times[j]);
    for (std::size_t c = 0; c < d; ++c) out(j, c) = fit.completed(0, k * d + c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

void save_baseline_fit(const SCWeights& fit, const std::string& path) {
  nlohmann::ordered_json j;
  j["method"] = fit.method;
  j["weights"] = fit.w;
  j["intercept"] = fit.intercept;
  j["diagnostics"] = fit.diagnostics;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void save_baseline_fit(const MCModel& fit, const Vector& grid,
                       const std::string& path) {
  nlohmann::ordered_json j;
  j["method"] = "mc";
  j["mu"] = fit.mu;
  j["rank"] = fit.rank;
  j["iterations"] = fit.iterations;
  j["grid"] = grid;
  std::vector<Vector> rows;
  for (std::size_t i = 0; i < fit.completed.rows(); ++i)
    rows.emplace_back(fit.completed.row(i), fit.completed.row(i) + fit.completed.cols());
  j["completed"] = rows;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

SCWeights load_baseline_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  SCWeights out;
  out.method = j.at("method").get<std::string>();
  out.w = j.at("weights").get<Vector>();
  out.intercept = j.value("intercept", 0.0);
  if (j.contains("diagnostics"))
    out.diagnostics = j.at("diagnostics").get<std::map<std::string, double>>();
  return out;
}

}  // namespace ctrlpath
