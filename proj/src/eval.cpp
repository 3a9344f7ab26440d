#include "ctrlpath/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <ostream>

#include <json.hpp>

#include "ctrlpath/errors.hpp"
#include "ctrlpath/kernels.hpp"
#include "ctrlpath/rng.hpp"

namespace ctrlpath {

double ExperimentReport::mean() const {
  if (errors.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double e : errors) s += e;
  return s / static_cast<double>(errors.size());
}

double ExperimentReport::stddev() const {
  if (errors.size() < 2) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (double e : errors) s += (e - m) * (e - m);
  return std::sqrt(s / static_cast<double>(errors.size() - 1));
}

double control_error(const Matrix& truth, const Matrix& estimate,
                     const Vector& times) {
  if (times.empty()) throw ValidationError("control_error: empty time set");
  if (truth.rows() != times.size() || estimate.rows() != times.size() ||
      truth.cols() != estimate.cols())
    throw ValidationError("control_error: shape mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < truth.rows(); ++j)
    for (std::size_t c = 0; c < truth.cols(); ++c) {
      const double diff = truth(j, c) - estimate(j, c);
      s += diff * diff;
    }
  return s / static_cast<double>(times.size());
}

// ---------------------------------------------------------------------------
// Single-method counterfactual estimation

Matrix estimate_counterfactual(const std::string& method, const Panel& panel,
                               const Vector& fit_grid, const Vector& eval_times,
                               const TrainConfig& train_config, std::uint64_t seed,
                               std::vector<std::size_t>* active_out) {
  if (eval_times.empty())
    throw ValidationError("estimate_counterfactual: empty eval times");

  if (method == "ncsc") {
    TrainConfig cfg = train_config;
    cfg.seed = seed;
    const FitResult res = fit(panel, cfg);
    if (active_out) *active_out = res.active_set;
    return predict(res.model, panel, eval_times);
  }

  // Discrete baselines work on spline-aligned values.
  Vector full_grid = fit_grid;
  full_grid.insert(full_grid.end(), eval_times.begin(), eval_times.end());
  for (std::size_t k = 0; k + 1 < full_grid.size(); ++k)
    if (!(full_grid[k] < full_grid[k + 1]))
      throw ValidationError(
          "estimate_counterfactual: fit grid and eval times must be ascending");
  const std::vector<Matrix> aligned = align_panel(panel, full_grid);

  if (method == "mc") {
    const std::size_t d = panel.dims;
    const std::size_t n = aligned.size();
    Matrix full(n, full_grid.size() * d);
    std::vector<bool> observed(full.size(), true);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < full_grid.size(); ++k)
        for (std::size_t c = 0; c < d; ++c) {
          full(i, k * d + c) = aligned[i](k, c);
          if (i == 0 && !(full_grid[k] < panel.treatment_time))
            observed[i * full.cols() + k * d + c] = false;
        }
    MCConfig mc_cfg;
    mc_cfg.seed = seed;
    const MCModel model = fit_mc_sc(full, observed, mc_cfg);
    return predict_baseline(model, full_grid, eval_times, d);
  }

  const Matrix pre = stack_controls(aligned, full_grid, panel.treatment_time);
  const Vector target = stack_treated(aligned, full_grid, panel.treatment_time);
  SCWeights weights;
  if (method == "sc") {
    weights = fit_sc(pre, target);
  } else if (method == "kmm") {
    weights = fit_kmm_sc(pre, target);
  } else if (method == "rsc") {
    weights = fit_rsc(pre, target);
  } else {
    throw ValidationError("unknown method '" + method + "'");
  }
  return predict_baseline(weights, aligned, full_grid, eval_times);
}

// ---------------------------------------------------------------------------
// Replicated harnesses

namespace {

struct RunOutcome {
  bool ok = false;
  double error = 0.0;
  double runtime_s = 0.0;
  std::vector<std::size_t> active;
  std::uint64_t seed = 0;
};

double regime_fraction(const std::string& regime) {
  if (regime == "aligned") return 0.0;
  if (regime == "drop30") return 0.3;
  if (regime == "drop50") return 0.5;
  if (regime == "drop70") return 0.7;
  throw ValidationError("unknown regime '" + regime + "'");
}

Panel apply_regime(const Panel& panel, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return panel;
  Panel out;
  out.dims = panel.dims;
  out.treatment_time = panel.treatment_time;
  for (std::size_t u = 0; u < panel.units.size(); ++u)
    out.units.push_back(
        drop_observations(panel.units[u], fraction, derive_seed(seed, 0xD0 + u)));
  out.finalize();
  return out;
}

std::vector<ExperimentReport> collect_reports(
    const std::vector<std::string>& methods, const std::string& regime,
    const std::vector<std::vector<RunOutcome>>& outcomes) {
  std::vector<ExperimentReport> reports;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    ExperimentReport rep;
    rep.method = methods[m];
    rep.regime = regime;
    for (const auto& per_run : outcomes) {
      const RunOutcome& o = per_run[m];
      if (!o.ok) {
        ++rep.failed_runs;
        continue;
      }
      rep.errors.push_back(o.error);
      rep.runtimes_s.push_back(o.runtime_s);
      rep.seeds.push_back(o.seed);
      if (rep.method == "ncsc") rep.active_sets.push_back(o.active);
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace

std::vector<ExperimentReport> run_lorenz_benchmark(
    const BenchmarkConfig& config, const std::vector<std::string>& methods) {
  if (methods.empty()) throw ValidationError("run_lorenz_benchmark: no methods");
  config.lorenz.validate();

  std::vector<ExperimentReport> all;
  for (const std::string& regime : config.regimes) {
    const double fraction = regime_fraction(regime);
    std::vector<std::vector<RunOutcome>> outcomes(
        config.n_runs, std::vector<RunOutcome>(methods.size()));

    auto one_run = [&](std::size_t r) {
      const std::uint64_t run_seed = derive_seed(config.seed, r);
      LorenzConfig lz = config.lorenz;
      lz.seed = run_seed;
      const SimulatedPanel sim = simulate_lorenz(lz);
      const Panel panel = apply_regime(sim.panel, fraction, run_seed);

      Vector fit_grid, eval_times;
      Matrix truth_post;
      {
        const auto& times = sim.truth.times;
        std::size_t n_post = 0;
        for (double t : times)
          if (t > lz.t_treat) ++n_post;
        truth_post = Matrix(n_post, 1);
        std::size_t row = 0;
        for (std::size_t k = 0; k < times.size(); ++k) {
          if (times[k] < lz.t_treat) fit_grid.push_back(times[k]);
          if (times[k] > lz.t_treat) {
            eval_times.push_back(times[k]);
            truth_post(row++, 0) = sim.truth.values(k, 0);
          }
        }
      }

      for (std::size_t m = 0; m < methods.size(); ++m) {
        RunOutcome& o = outcomes[r][m];
        o.seed = run_seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const Matrix est =
              estimate_counterfactual(methods[m], panel, fit_grid, eval_times,
                                      config.train, derive_seed(run_seed, 0x7C5),
                                      &o.active);
          o.error = control_error(truth_post, est, eval_times);
          o.ok = true;
        } catch (const std::exception& e) {
          std::cerr << "run " << r << " method " << methods[m] << " (" << regime
                    << ") failed: " << e.what() << "\n";
        }
        const auto t1 = std::chrono::steady_clock::now();
        o.runtime_s = std::chrono::duration<double>(t1 - t0).count();
      }
    };

    if (config.parallel)
      kernels::parallel_for(config.n_runs, one_run);
    else
      for (std::size_t r = 0; r < config.n_runs; ++r) one_run(r);

    auto reports = collect_reports(methods, regime, outcomes);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  return all;
}

std::vector<ExperimentReport> run_truth_comparison(
    const Panel& panel, const UnitSeries& truth,
    const std::vector<std::string>& methods, const TruthComparisonConfig& config) {
  if (methods.empty()) throw ValidationError("run_truth_comparison: no methods");
  Vector fit_grid, eval_times;
  std::vector<std::size_t> eval_rows;
  for (std::size_t k = 0; k < truth.times.size(); ++k) {
    if (truth.times[k] < panel.treatment_time) fit_grid.push_back(truth.times[k]);
    if (truth.times[k] > panel.treatment_time) {
      eval_times.push_back(truth.times[k]);
      eval_rows.push_back(k);
    }
  }
  if (eval_times.empty())
    throw ValidationError("run_truth_comparison: truth has no post-treatment times");
  Matrix truth_post(eval_rows.size(), truth.values.cols());
  for (std::size_t j = 0; j < eval_rows.size(); ++j)
    for (std::size_t c = 0; c < truth.values.cols(); ++c)
      truth_post(j, c) = truth.values(eval_rows[j], c);

  std::vector<std::vector<RunOutcome>> outcomes(
      config.n_runs, std::vector<RunOutcome>(methods.size()));
  auto one_run = [&](std::size_t r) {
    const std::uint64_t run_seed = derive_seed(config.seed, r);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      RunOutcome& o = outcomes[r][m];
      o.seed = run_seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const Matrix est = estimate_counterfactual(
            methods[m], panel, fit_grid, eval_times, config.train, run_seed,
            &o.active);
        o.error = control_error(truth_post, est, eval_times);
        o.ok = true;
      } catch (const std::exception& e) {
        std::cerr << "run " << r << " method " << methods[m]
                  << " failed: " << e.what() << "\n";
      }
      const auto t1 = std::chrono::steady_clock::now();
      o.runtime_s = std::chrono::duration<double>(t1 - t0).count();
    }
  };
  if (config.parallel)
    kernels::parallel_for(config.n_runs, one_run);
  else
    for (std::size_t r = 0; r < config.n_runs; ++r) one_run(r);
  return collect_reports(methods, "truth", outcomes);
}

std::vector<ExperimentReport> run_panel_study(
    const Panel& panel, const std::vector<std::string>& methods,
    const PanelStudyConfig& config) {
  if (methods.empty()) throw ValidationError("run_panel_study: no methods");
  if (config.n_train_points + 1 >= config.n_points)
    throw ValidationError("run_panel_study: need train points < total points");

  // Restrict every unit to the pre-treatment record.
  Panel pre;
  pre.dims = panel.dims;
  pre.treatment_time = panel.treatment_time;
  for (const auto& u : panel.units) {
    UnitSeries cut;
    cut.unit_id = u.unit_id;
    std::size_t n = 0;
    while (n < u.times.size() && u.times[n] < panel.treatment_time) ++n;
    if (n < 2)
      throw ValidationError("run_panel_study: unit '" + u.unit_id +
                            "' lacks pre-treatment observations");
    cut.times.assign(u.times.begin(), u.times.begin() + n);
    cut.values = Matrix(n, panel.dims);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < panel.dims; ++c) cut.values(j, c) = u.values(j, c);
    pre.units.push_back(std::move(cut));
  }
  pre.finalize();

  Panel study = config.augment
                    ? resample_regular(pre, config.n_points, pre.t_begin, pre.t_end)
                    : pre;
  const Vector& grid = study.treated().times;
  if (grid.size() != config.n_points)
    throw ValidationError("run_panel_study: panel does not match the grid size");
  // Artificial split point between the training block and the held-out tail.
  study.treatment_time =
      0.5 * (grid[config.n_train_points - 1] + grid[config.n_train_points]);
  study.finalize();

  Vector fit_grid(grid.begin(), grid.begin() + config.n_train_points);
  Vector eval_times(grid.begin() + config.n_train_points, grid.end());
  Matrix truth_test(eval_times.size(), study.dims);
  for (std::size_t j = 0; j < eval_times.size(); ++j)
    for (std::size_t c = 0; c < study.dims; ++c)
      truth_test(j, c) = study.treated().values(config.n_train_points + j, c);

  std::vector<std::vector<RunOutcome>> outcomes(
      config.n_runs, std::vector<RunOutcome>(methods.size()));
  auto one_run = [&](std::size_t r) {
    const std::uint64_t run_seed = derive_seed(config.seed, r);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      RunOutcome& o = outcomes[r][m];
      o.seed = run_seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const Matrix est = estimate_counterfactual(
            methods[m], study, fit_grid, eval_times, config.train, run_seed,
            &o.active);
        o.error = control_error(truth_test, est, eval_times);
        o.ok = true;
      } catch (const std::exception& e) {
        std::cerr << "run " << r << " method " << methods[m]
                  << " failed: " << e.what() << "\n";
      }
      const auto t1 = std::chrono::steady_clock::now();
      o.runtime_s = std::chrono::duration<double>(t1 - t0).count();
    }
  };
  if (config.parallel)
    kernels::parallel_for(config.n_runs, one_run);
  else
    for (std::size_t r = 0; r < config.n_runs; ++r) one_run(r);
  return collect_reports(methods, "pretreatment-fit", outcomes);
}

WeightConsistencyReport weight_consistency(const Panel& panel,
                                           const TrainConfig& train_config,
                                           std::size_t n_runs, std::uint64_t seed,
                                           bool parallel) {
  if (n_runs == 0) throw ValidationError("weight_consistency: need runs >= 1");
  const std::size_t n = panel.n_controls();
  std::vector<Vector> abs_w(n_runs);
  std::vector<std::vector<std::size_t>> actives(n_runs);
  std::vector<std::uint64_t> seeds(n_runs);

  auto one_run = [&](std::size_t r) {
    TrainConfig cfg = train_config;
    cfg.seed = derive_seed(seed, r);
    seeds[r] = cfg.seed;
    const FitResult res = fit(panel, cfg);
    abs_w[r].resize(n);
    for (std::size_t i = 0; i < n; ++i) abs_w[r][i] = std::abs(res.model.w_diag[i]);
    actives[r] = res.active_set;
  };
  if (parallel)
    kernels::parallel_for(n_runs, one_run);
  else
    for (std::size_t r = 0; r < n_runs; ++r) one_run(r);

  WeightConsistencyReport rep;
  for (std::size_t i = 0; i < n; ++i)
    rep.control_ids.push_back(panel.control(i).unit_id);
  rep.mean_abs_w.assign(n, 0.0);
  rep.std_abs_w.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < n_runs; ++r) s += abs_w[r][i];
    rep.mean_abs_w[i] = s / static_cast<double>(n_runs);
    if (n_runs > 1) {
      double v = 0.0;
      for (std::size_t r = 0; r < n_runs; ++r) {
        const double d = abs_w[r][i] - rep.mean_abs_w[i];
        v += d * d;
      }
      rep.std_abs_w[i] = std::sqrt(v / static_cast<double>(n_runs - 1));
    }
  }
  rep.active_sets = actives;
  rep.seeds = std::move(seeds);

  // Modal active set; ties resolve to the lexicographically smallest.
  std::map<std::vector<std::size_t>, std::size_t> counts;
  for (const auto& a : actives) counts[a] += 1;
  std::size_t best_count = 0;
  for (const auto& [set, count] : counts)
    if (count > best_count) {
      best_count = count;
      rep.modal_active_set = set;
    }
  rep.support_agreement =
      static_cast<double>(best_count) / static_cast<double>(n_runs);
  return rep;
}

UnbiasednessResult unbiasedness_mc(const LinearDGPConfig& config,
                                   const Vector& t_grid, std::size_t n_reps,
                                   const std::string& estimator,
                                   double injected_effect,
                                   const TrainConfig& train_config, bool parallel) {
  if (n_reps < 2) throw ValidationError("unbiasedness_mc: need >= 2 replications");
  std::vector<double> rep_means(n_reps);
  std::vector<char> ok(n_reps, 0);

  auto one_rep = [&](std::size_t r) {
    LinearDGPConfig cfg = config;
    cfg.seed = derive_seed(config.seed, r);
    SimulatedPanel sim = simulate_linear(cfg, t_grid);
    Panel panel = sim.panel;

    Vector fit_grid, eval_times;
    std::vector<std::size_t> eval_rows;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
      if (t_grid[k] < cfg.t_treat) fit_grid.push_back(t_grid[k]);
      if (t_grid[k] > cfg.t_treat) {
        eval_times.push_back(t_grid[k]);
        eval_rows.push_back(k);
      }
    }
    if (injected_effect != 0.0)
      for (const std::size_t k : eval_rows)
        for (std::size_t c = 0; c < panel.dims; ++c)
          panel.treated().values(k, c) += injected_effect;

    const Matrix est =
        estimate_counterfactual(estimator, panel, fit_grid, eval_times,
                                train_config, derive_seed(cfg.seed, 0xE0));
    double mean_tau = 0.0;
    for (std::size_t j = 0; j < eval_rows.size(); ++j)
      for (std::size_t c = 0; c < panel.dims; ++c)
        mean_tau += panel.treated().values(eval_rows[j], c) - est(j, c);
    mean_tau /= static_cast<double>(eval_rows.size() * panel.dims);
    rep_means[r] = mean_tau;
    ok[r] = 1;
  };
  if (parallel)
    kernels::parallel_for(n_reps, one_rep);
  else
    for (std::size_t r = 0; r < n_reps; ++r) one_rep(r);

  UnbiasednessResult res;
  res.injected_effect = injected_effect;
  double sum = 0.0;
  for (std::size_t r = 0; r < n_reps; ++r) {
    if (!ok[r]) throw NumericalError("unbiasedness_mc: replication failed");
    sum += rep_means[r];
    ++res.reps;
  }
  res.mean_tau = sum / static_cast<double>(res.reps);
  double var = 0.0;
  for (std::size_t r = 0; r < n_reps; ++r) {
    const double d = rep_means[r] - res.mean_tau;
    var += d * d;
  }
  var /= static_cast<double>(res.reps - 1);
  res.std_error = std::sqrt(var / static_cast<double>(res.reps));
  return res;
}

RuntimeProfile runtime_profile(const std::string& axis,
                               const std::vector<std::size_t>& grid,
                               const RuntimeProfileConfig& config) {
  if (grid.empty()) throw ValidationError("runtime_profile: empty grid");
  if (axis != "n_controls" && axis != "n_pretreatment")
    throw ValidationError("runtime_profile: axis must be n_controls or n_pretreatment");

  RuntimeProfile out;
  out.axis = axis;
  out.grid = grid;
  for (const std::size_t g : grid) {
    LorenzConfig lz = config.base;
    lz.seed = derive_seed(config.seed, g);
    if (axis == "n_controls") {
      lz.n_controls = g;
    } else {
      lz.t_treat = static_cast<double>(g) * lz.sample_spacing;
      lz.horizon = lz.t_treat * 1.25;
    }
    const SimulatedPanel sim = simulate_lorenz(lz);
    TrainConfig cfg = config.train;
    cfg.seed = derive_seed(config.seed, 1000 + g);
    const auto t0 = std::chrono::steady_clock::now();
    (void)fit(sim.panel, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    out.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {
nlohmann::ordered_json report_to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["regime"] = r.regime;
  j["errors"] = r.errors;
  j["mean"] = r.mean();
  j["std"] = r.stddev();
  j["failed_runs"] = r.failed_runs;
  j["seeds"] = r.seeds;
  if (!r.active_sets.empty()) j["active_sets"] = r.active_sets;
  return j;
}
}  // namespace

void write_reports_json(std::ostream& out,
                        const std::vector<ExperimentReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) j.push_back(report_to_json(r));
  out << j.dump(2) << '\n';
}

void write_reports_csv(std::ostream& out,
                       const std::vector<ExperimentReport>& reports) {
  out << "method,regime,run,error,runtime\n";
  for (const auto& r : reports)
    for (std::size_t k = 0; k < r.errors.size(); ++k)
      out << r.method << ',' << r.regime << ',' << k << ',' << r.errors[k] << ','
          << r.runtimes_s[k] << '\n';
}

}  // namespace ctrlpath
