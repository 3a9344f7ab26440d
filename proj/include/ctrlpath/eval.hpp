#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ctrlpath/baselines.hpp"
#include "ctrlpath/dgp.hpp"
#include "ctrlpath/ncsc.hpp"
#include "ctrlpath/panel.hpp"

namespace ctrlpath {

// Per-method, per-regime results over replicated runs. Wall-clock runtimes
// are kept out of the JSON report (they land in the CSV) so that reports are
// byte-identical across repeated runs with the same seed.
struct ExperimentReport {
  std::string method;
  std::string regime;
  std::vector<double> errors;      // per completed run
  std::vector<double> runtimes_s;  // per completed run
  std::vector<std::vector<std::size_t>> active_sets;  // ncsc runs only
  std::vector<std::uint64_t> seeds;
  std::size_t failed_runs = 0;

  double mean() const;
  double stddev() const;  // sample standard deviation
};

// Mean over times of the squared L2 norm of (truth - estimate).
double control_error(const Matrix& truth, const Matrix& estimate,
                     const Vector& times);

// Counterfactual estimate of the treated unit at eval_times by one method.
// Baselines are fitted on spline-aligned values over fit_grid (all times
// < panel.treatment_time) and predict on the aligned eval grid; "ncsc" reads
// the irregular panel directly. active_out receives the ncsc active set.
Matrix estimate_counterfactual(const std::string& method, const Panel& panel,
                               const Vector& fit_grid, const Vector& eval_times,
                               const TrainConfig& train_config, std::uint64_t seed,
                               std::vector<std::size_t>* active_out = nullptr);

struct BenchmarkConfig {
  LorenzConfig lorenz;
  std::vector<std::string> regimes{"aligned", "drop30", "drop50", "drop70"};
  std::size_t n_runs = 10;
  TrainConfig train;
  std::uint64_t seed = 0;
  bool parallel = true;
};

// Simulate / drop / fit on t < T / evaluate counterfactual error over the
// post-treatment sample times, for every method and regime.
std::vector<ExperimentReport> run_lorenz_benchmark(
    const BenchmarkConfig& config, const std::vector<std::string>& methods);

// Comparison on a fixed panel with a known counterfactual path: runs vary the
// ncsc seed only. Evaluation times are the truth's post-treatment times.
struct TruthComparisonConfig {
  std::size_t n_runs = 10;
  TrainConfig train;
  std::uint64_t seed = 0;
  bool parallel = true;
};
std::vector<ExperimentReport> run_truth_comparison(
    const Panel& panel, const UnitSeries& truth,
    const std::vector<std::string>& methods, const TruthComparisonConfig& config);

// Pre-treatment augmentation protocol: resample the pre-treatment record on a
// regular grid, fit on the first block, report the fit error on the held-out
// tail (still pre-treatment, so the truth is observed).
struct PanelStudyConfig {
  std::size_t n_points = 300;
  std::size_t n_train_points = 200;
  bool augment = true;
  std::size_t n_runs = 1;
  TrainConfig train;
  std::uint64_t seed = 0;
  bool parallel = true;
};
std::vector<ExperimentReport> run_panel_study(
    const Panel& panel, const std::vector<std::string>& methods,
    const PanelStudyConfig& config);

struct WeightConsistencyReport {
  std::vector<std::string> control_ids;
  Vector mean_abs_w;
  Vector std_abs_w;
  std::vector<std::vector<std::size_t>> active_sets;  // per run
  std::vector<std::size_t> modal_active_set;
  double support_agreement = 0.0;
  std::vector<std::uint64_t> seeds;
};

// Refits ncsc under different seeds and reports per-control weight spread and
// how often runs agree on the modal active set.
WeightConsistencyReport weight_consistency(const Panel& panel,
                                           const TrainConfig& train_config,
                                           std::size_t n_runs, std::uint64_t seed,
                                           bool parallel = true);

struct UnbiasednessResult {
  double mean_tau = 0.0;
  double std_error = 0.0;
  double injected_effect = 0.0;
  std::size_t reps = 0;
};

// Monte-Carlo check on the linear DGP: with no true effect the average
// estimated effect should be statistically indistinguishable from zero; with
// an injected post-treatment shift it should recover the shift.
UnbiasednessResult unbiasedness_mc(const LinearDGPConfig& config,
                                   const Vector& t_grid, std::size_t n_reps,
                                   const std::string& estimator,
                                   double injected_effect = 0.0,
                                   const TrainConfig& train_config = {},
                                   bool parallel = true);

struct RuntimeProfile {
  std::string axis;
  std::vector<std::size_t> grid;
  std::vector<double> seconds;
};

struct RuntimeProfileConfig {
  LorenzConfig base;
  TrainConfig train;
  std::uint64_t seed = 0;
};

// Wall-clock per ncsc fit along "n_controls" or "n_pretreatment".
RuntimeProfile runtime_profile(const std::string& axis,
                               const std::vector<std::size_t>& grid,
                               const RuntimeProfileConfig& config);

// Deterministic JSON (no timings) and flat CSV (with timings).
void write_reports_json(std::ostream& out,
                        const std::vector<ExperimentReport>& reports);
void write_reports_csv(std::ostream& out,
                       const std::vector<ExperimentReport>& reports);

}  // namespace ctrlpath
