#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctrlpath/panel.hpp"

namespace ctrlpath {

// Weights of a discrete-time synthetic control. For "sc" the weights lie on
// the probability simplex; for "kmm" they satisfy the box and sum-band
// constraints; "rsc" weights are unconstrained and carry an intercept.
struct SCWeights {
  Vector w;
  std::string method;  // "sc" | "kmm" | "rsc"
  double intercept = 0.0;
  std::map<std::string, double> diagnostics;
};

struct KMMConfig {
  double bandwidth = 0.0;  // <= 0: median pairwise distance heuristic
  double upper_bound = 1.0;
  double eps_sum = 0.01;
  std::size_t max_iters = 20000;
  double tol = 1e-10;
};

struct MCConfig {
  double mu = -1.0;  // < 0: selected by validation masking of observed cells
  double tol = 1e-6;
  std::size_t max_iters = 500;
  std::uint64_t seed = 0;
};

struct MCModel {
  Matrix completed;
  double mu = 0.0;
  std::size_t rank = 0;
  std::size_t iterations = 0;
};

// Spline evaluations of every unit on a shared grid; out[u] is
// grid.size() x d with unit order matching the panel.
std::vector<Matrix> align_panel(const Panel& panel, const Vector& grid);

// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v);

// Flattens unit values over the grid times with t < t_limit into one row per
// control ((time, dim) stacked), plus the treated target vector.
Matrix stack_controls(const std::vector<Matrix>& aligned, const Vector& grid,
                      double t_limit);
Vector stack_treated(const std::vector<Matrix>& aligned, const Vector& grid,
                     double t_limit);

// Projected gradient on the simplex, fixed step 1/L with L bounded by power
// iteration. controls is (n-1) x features, target has `features` entries.
SCWeights fit_sc(const Matrix& controls, const Vector& target);

// Kernel mean matching with a Gaussian kernel over the units' pre-treatment
// vectors, solved by projected gradient with Dykstra projections onto the
// box/sum-band feasible set.
SCWeights fit_kmm_sc(const Matrix& controls, const Vector& target,
                     const KMMConfig& config = {});

// Elastic net with intercept; mixing weight and penalty strength selected by
// 5-fold cross-validation over fixed grids.
SCWeights fit_rsc(const Matrix& controls, const Vector& target);

// Single elastic-net solve by coordinate descent (exposed for testing and
// used by fit_rsc). Objective: (1/2N)||y - Xw - b||^2 +
// lambda * (alpha ||w||_1 + (1-alpha)/2 ||w||^2).
SCWeights elastic_net_fit(const Matrix& controls, const Vector& target,
                          double alpha_mix, double lambda_en);

// Soft-impute: iterative SVD soft-thresholding of the masked matrix.
// observed is row-major over full's entries.
MCModel fit_mc_sc(const Matrix& full, const std::vector<bool>& observed,
                  const MCConfig& config = {});

// Synthetic-control trajectory at the requested grid times (error if a time
// is not on the grid). aligned[0] is the treated unit and is ignored.
Matrix predict_baseline(const SCWeights& fit, const std::vector<Matrix>& aligned,
                        const Vector& grid, const Vector& times);
// Completed treated row of the matrix-completion model at the grid times.
Matrix predict_baseline(const MCModel& fit, const Vector& grid,
                        const Vector& times, std::size_t d);

// JSON serialization per fit: {method, weights|matrix, hyperparameters,
// diagnostics}.
void save_baseline_fit(const SCWeights& fit, const std::string& path);
void save_baseline_fit(const MCModel& fit, const Vector& grid,
                       const std::string& path);
SCWeights load_baseline_fit(const std::string& path);

}  // namespace ctrlpath
