#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctrlpath/baselines.hpp"
#include "ctrlpath/dgp.hpp"
#include "ctrlpath/errors.hpp"
#include "ctrlpath/eval.hpp"
#include "ctrlpath/ncsc.hpp"
#include "ctrlpath/panel.hpp"

namespace {

using namespace ctrlpath;

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// "start:stop:step" inclusive of both ends when step divides the range.
Vector parse_time_range(const std::string& spec) {
  Vector out;
  double start = 0, stop = 0, step = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &start, &stop, &step) != 3 ||
      !(step > 0.0) || !(stop >= start))
    throw ValidationError("times must be start:stop:step with step > 0");
  for (double t = start; t <= stop + 1e-9 * step; t += step) out.push_back(t);
  return out;
}

void write_text_atomically(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string truth_path_for(const std::string& panel_path) {
  std::filesystem::path p(panel_path);
  auto stem = p.stem().string();
  auto parent = p.parent_path();
  return (parent / (stem + ".truth.csv")).string();
}

std::string with_extension(const std::string& path, const std::string& ext) {
  std::filesystem::path p(path);
  p.replace_extension(ext);
  return p.string();
}

// Matrix as CSV rows time,v0[,v1,...].
std::string trajectory_csv(const Vector& times, const Matrix& values) {
  std::ostringstream out;
  out << "time";
  for (std::size_t c = 0; c < values.cols(); ++c) out << ",v" << c;
  out << "\n";
  char buf[40];
  for (std::size_t j = 0; j < times.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g", times[j]);
    out << buf;
    for (std::size_t c = 0; c < values.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", values(j, c));
      out << ',' << buf;
    }
    out << "\n";
  }
  return out.str();
}

struct TrainFlags {
  TrainConfig cfg;
  std::string lambda_grid_csv;

  void attach(CLI::App* app) {
    app->add_option("--lr", cfg.lr, "Adam learning rate");
    app->add_option("--epochs", cfg.epochs, "training epochs per lambda");
    app->add_option("--patience", cfg.patience,
                    "epochs without improvement before halving the lr");
    app->add_option("--solver-step", cfg.solver_step,
                    "RK4 step (default: minimum adjacent observation gap)");
    app->add_option("--latent-dim", cfg.latent_dim, "latent state dimension");
    app->add_option("--validation-fraction", cfg.validation_fraction,
                    "tail fraction of pre-treatment points held out");
    app->add_option("--min-improvement", cfg.improvement_rtol,
                    "relative validation gain required to adopt new parameters");
    app->add_option("--lambda-grid", lambda_grid_csv,
                    "comma-separated L1 penalty grid (default 0.001,0.01,0.1,1)");
    app->add_option("--lambda", cfg.lambda_l1,
                    "fixed L1 penalty (used when --lambda-grid is 'none')");
  }

  TrainConfig resolve() const {
    TrainConfig out = cfg;
    if (lambda_grid_csv == "none") {
      out.lambda_grid.clear();
    } else if (!lambda_grid_csv.empty()) {
      out.lambda_grid.clear();
      for (const auto& tok : split_list(lambda_grid_csv))
        out.lambda_grid.push_back(std::stod(tok));
    }
    return out;
  }
};

int run_cli(int argc, char** argv) {
  CLI::App app{"continuous-time synthetic controls"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags take precedence");

  // --- simulate -----------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "generate synthetic panels");
  simulate->require_subcommand(1);

  auto* lorenz = simulate->add_subcommand("lorenz", "chaotic Lorenz-96 panel");
  LorenzConfig lz;
  std::string lorenz_out;
  lorenz->add_option("--d", lz.d, "system dimension");
  lorenz->add_option("--f-control", lz.f_control, "control forcing");
  lorenz->add_option("--f-treated", lz.f_treated, "treated forcing after T");
  lorenz->add_option("--controls", lz.n_controls, "number of control units");
  lorenz->add_option("--t-treat", lz.t_treat, "treatment time");
  lorenz->add_option("--horizon", lz.horizon, "end of the simulation");
  lorenz->add_option("--spacing", lz.sample_spacing, "sample spacing");
  lorenz->add_option("--rk-step", lz.rk_step, "integrator step");
  lorenz->add_option("--seed", lz.seed, "random seed")->required();
  lorenz->add_option("-o,--output", lorenz_out, "panel CSV path")->required();

  auto* linear = simulate->add_subcommand("linear", "linear dynamical panel");
  LinearDGPConfig ln;
  std::string linear_out, weights_csv, alpha_breaks;
  double alpha0 = 0.0, lin_t0 = 0.0, lin_t1 = 10.0;
  std::size_t lin_points = 101;
  linear->add_option("--units", ln.n_units, "number of units incl. treated");
  linear->add_option("--alpha", alpha0, "drift coefficient");
  linear->add_option("--alpha-breaks", alpha_breaks,
                     "piecewise drift as t1:v1,t2:v2 applied after --alpha");
  linear->add_option("--noise-std", ln.noise_std, "per-step noise std");
  linear->add_option("--weights", weights_csv,
                     "true combination weights (default uniform)");
  linear->add_option("--t-treat", ln.t_treat, "treatment time")->required();
  linear->add_option("--t0", lin_t0, "grid start");
  linear->add_option("--horizon", lin_t1, "grid end");
  linear->add_option("--points", lin_points, "grid points");
  linear->add_option("--seed", ln.seed, "random seed")->required();
  linear->add_option("-o,--output", linear_out, "panel CSV path")->required();

  // --- fit ------------------------------------------------------------------
  auto* fit_cmd = app.add_subcommand("fit", "fit one estimator to a panel");
  std::string fit_method, fit_input, fit_out;
  double fit_ttime_val = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t fit_seed = 0;
  std::size_t fit_grid_points = 0;
  TrainFlags fit_train;
  fit_cmd->add_option("--method", fit_method, "ncsc|sc|kmm|rsc|mc")->required();
  fit_cmd->add_option("--input", fit_input, "panel CSV")->required();
  fit_cmd->add_option("--treatment-time", fit_ttime_val,
                      "overrides the panel metadata");
  fit_cmd->add_option("--seed", fit_seed, "random seed");
  fit_cmd->add_option("--grid-points", fit_grid_points,
                      "aligned grid size for discrete baselines "
                      "(default: the treated unit's observation times)");
  fit_cmd->add_option("-o,--output", fit_out, "fit JSON path")->required();
  fit_train.attach(fit_cmd);

  // --- predict / effect -------------------------------------------------------
  auto* predict_cmd = app.add_subcommand("predict", "counterfactual trajectory");
  std::string pred_fit, pred_input, pred_times, pred_out;
  double pred_ttime_val = std::numeric_limits<double>::quiet_NaN();
  predict_cmd->add_option("--fit", pred_fit, "fit JSON from `fit`")->required();
  predict_cmd->add_option("--input", pred_input, "panel CSV")->required();
  predict_cmd->add_option("--times", pred_times, "start:stop:step")->required();
  predict_cmd->add_option("--treatment-time", pred_ttime_val, "override metadata");
  predict_cmd->add_option("-o,--output", pred_out, "trajectory CSV")->required();

  auto* effect_cmd = app.add_subcommand("effect", "treatment-effect series");
  std::string eff_fit, eff_input, eff_times, eff_out;
  double eff_ttime_val = std::numeric_limits<double>::quiet_NaN();
  effect_cmd->add_option("--fit", eff_fit, "fit JSON from `fit`")->required();
  effect_cmd->add_option("--input", eff_input, "panel CSV")->required();
  effect_cmd->add_option("--times", eff_times,
                         "start:stop:step, all after the treatment time")
      ->required();
  effect_cmd->add_option("--treatment-time", eff_ttime_val, "override metadata");
  effect_cmd->add_option("-o,--output", eff_out, "tau CSV")->required();

  // --- compare -----------------------------------------------------------------
  auto* compare = app.add_subcommand(
      "compare", "replicated method comparison; JSON report plus runtime CSV");
  std::string cmp_methods = "ncsc,sc,kmm,rsc,mc";
  std::string cmp_input, cmp_truth, cmp_out, cmp_regimes = "aligned";
  std::string cmp_simulate;
  std::size_t cmp_runs = 10;
  std::uint64_t cmp_seed = 0;
  bool cmp_augment = false;
  double cmp_ttime_val = std::numeric_limits<double>::quiet_NaN();
  TrainFlags cmp_train;
  LorenzConfig cmp_lorenz;
  compare->add_option("--methods", cmp_methods, "comma-separated methods");
  compare->add_option("--input", cmp_input, "panel CSV");
  compare->add_option("--truth", cmp_truth,
                      "counterfactual CSV (default: sibling .truth.csv)");
  compare->add_option("--simulate", cmp_simulate,
                      "simulate fresh data per run: 'lorenz'");
  compare->add_option("--regimes", cmp_regimes,
                      "aligned,drop30,drop50,drop70 (with --simulate)");
  compare->add_option("--runs", cmp_runs, "replications");
  compare->add_option("--seed", cmp_seed, "base seed");
  compare->add_flag("--augment", cmp_augment,
                    "force the pre-treatment augmentation protocol");
  compare->add_option("--treatment-time", cmp_ttime_val, "override metadata");
  compare->add_option("-o,--output", cmp_out, "report JSON path")->required();
  compare->add_option("--d", cmp_lorenz.d, "lorenz dimension");
  compare->add_option("--controls", cmp_lorenz.n_controls, "lorenz controls");
  compare->add_option("--f-control", cmp_lorenz.f_control, "lorenz control forcing");
  compare->add_option("--f-treated", cmp_lorenz.f_treated, "lorenz treated forcing");
  compare->add_option("--t-treat", cmp_lorenz.t_treat, "lorenz treatment time");
  compare->add_option("--horizon", cmp_lorenz.horizon, "lorenz horizon");
  compare->add_option("--spacing", cmp_lorenz.sample_spacing, "lorenz spacing");
  compare->add_option("--rk-step", cmp_lorenz.rk_step, "lorenz integrator step");
  cmp_train.attach(compare);

  // --- consistency -----------------------------------------------------------
  auto* consistency =
      app.add_subcommand("consistency", "weight stability across refits");
  std::string con_input, con_out;
  std::size_t con_runs = 10;
  std::uint64_t con_seed = 0;
  double con_ttime_val = std::numeric_limits<double>::quiet_NaN();
  TrainFlags con_train;
  consistency->add_option("--input", con_input, "panel CSV")->required();
  consistency->add_option("--runs", con_runs, "number of refits");
  consistency->add_option("--seed", con_seed, "base seed");
  consistency->add_option("--treatment-time", con_ttime_val, "override metadata");
  consistency->add_option("-o,--output", con_out, "report JSON path")->required();
  con_train.attach(consistency);

  // --- profile ----------------------------------------------------------------
  auto* profile = app.add_subcommand("profile", "fit runtime along one axis");
  std::string prof_axis = "n_controls", prof_grid = "5,10,20", prof_out;
  std::uint64_t prof_seed = 0;
  TrainFlags prof_train;
  RuntimeProfileConfig prof_cfg;
  profile->add_option("--axis", prof_axis, "n_controls|n_pretreatment");
  profile->add_option("--grid", prof_grid, "comma-separated axis values");
  profile->add_option("--seed", prof_seed, "base seed");
  profile->add_option("-o,--output", prof_out, "CSV path")->required();
  prof_train.attach(profile);

  CLI11_PARSE(app, argc, argv);

  auto opt_time = [](double v) -> std::optional<double> {
    if (std::isnan(v)) return std::nullopt;
    return v;
  };

  if (lorenz->parsed()) {
    const SimulatedPanel sim = simulate_lorenz(lz);
    save_panel_file(sim.panel, lorenz_out);
    save_series_file(sim.truth, lz.t_treat, truth_path_for(lorenz_out));
    std::cout << "wrote " << lorenz_out << " and " << truth_path_for(lorenz_out)
              << "\n";
    return 0;
  }

  if (linear->parsed()) {
    ln.alpha = PiecewiseConstant::constant(alpha0);
    for (const auto& piece : split_list(alpha_breaks)) {
      double t = 0, v = 0;
      if (std::sscanf(piece.c_str(), "%lf:%lf", &t, &v) != 2)
        throw ValidationError("--alpha-breaks expects t:v pairs");
      ln.alpha.breaks.push_back(t);
      ln.alpha.values.push_back(v);
    }
    if (!weights_csv.empty())
      for (const auto& tok : split_list(weights_csv))
        ln.true_weights.push_back(std::stod(tok));
    else
      ln.true_weights.assign(ln.n_units - 1,
                             1.0 / static_cast<double>(ln.n_units - 1));
    ln.y0.assign(ln.n_units, 0.0);
    for (std::size_t i = 1; i < ln.n_units; ++i)
      ln.y0[i] = static_cast<double>(i);
    double combo = 0.0;
    for (std::size_t i = 0; i + 1 < ln.n_units; ++i)
      combo += ln.true_weights[i] * ln.y0[i + 1];
    ln.y0[0] = combo;
    Vector grid(lin_points);
    for (std::size_t k = 0; k < lin_points; ++k)
      grid[k] = lin_t0 + (lin_t1 - lin_t0) * static_cast<double>(k) /
                             static_cast<double>(lin_points - 1);
    const SimulatedPanel sim = simulate_linear(ln, grid);
    save_panel_file(sim.panel, linear_out);
    save_series_file(sim.truth, ln.t_treat, truth_path_for(linear_out));
    std::cout << "wrote " << linear_out << " and " << truth_path_for(linear_out)
              << "\n";
    return 0;
  }

  if (fit_cmd->parsed()) {
    const Panel panel = load_panel_file(fit_input, opt_time(fit_ttime_val));
    if (fit_method == "ncsc") {
      TrainConfig cfg = fit_train.resolve();
      cfg.seed = fit_seed;
      const FitResult res = ctrlpath::fit(panel, cfg);
      const std::string ckpt = with_extension(fit_out, ".ckpt");
      save_ncsc_model(res.model, ckpt);
      save_fit_manifest(res, ckpt, fit_out);
      std::cout << "selected_lambda=" << res.selected_lambda
                << " train_error=" << res.train_error
                << " active_set_size=" << res.active_set.size() << "\n";
      return 0;
    }
    Vector grid;
    if (fit_grid_points > 0) {
      const double span = panel.t_end - panel.t_begin;
      for (std::size_t k = 0; k < fit_grid_points; ++k)
        grid.push_back(panel.t_begin +
                       span * static_cast<double>(k) /
                           static_cast<double>(fit_grid_points - 1));
    } else {
      grid = panel.treated().times;
    }
    const auto aligned = align_panel(panel, grid);
    if (fit_method == "mc") {
      Matrix full(aligned.size(), grid.size() * panel.dims);
      std::vector<bool> observed(full.size(), true);
      for (std::size_t i = 0; i < aligned.size(); ++i)
        for (std::size_t k = 0; k < grid.size(); ++k)
          for (std::size_t c = 0; c < panel.dims; ++c) {
            full(i, k * panel.dims + c) = aligned[i](k, c);
            if (i == 0 && !(grid[k] < panel.treatment_time))
              observed[i * full.cols() + k * panel.dims + c] = false;
          }
      MCConfig mc_cfg;
      mc_cfg.seed = fit_seed;
      const MCModel model = fit_mc_sc(full, observed, mc_cfg);
      save_baseline_fit(model, grid, fit_out);
      std::cout << "mu=" << model.mu << " rank=" << model.rank << "\n";
      return 0;
    }
    const Matrix pre = stack_controls(aligned, grid, panel.treatment_time);
    const Vector target = stack_treated(aligned, grid, panel.treatment_time);
    SCWeights weights;
    if (fit_method == "sc")
      weights = fit_sc(pre, target);
    else if (fit_method == "kmm")
      weights = fit_kmm_sc(pre, target);
    else if (fit_method == "rsc")
      weights = fit_rsc(pre, target);
    else
      throw ValidationError("unknown method '" + fit_method + "'");
    save_baseline_fit(weights, fit_out);
    std::cout << "method=" << weights.method << "\n";
    return 0;
  }

  if (predict_cmd->parsed() || effect_cmd->parsed()) {
    const bool effect_mode = effect_cmd->parsed();
    const std::string fit_path = effect_mode ? eff_fit : pred_fit;
    const std::string input = effect_mode ? eff_input : pred_input;
    const std::string out_path = effect_mode ? eff_out : pred_out;
    const Vector times = parse_time_range(effect_mode ? eff_times : pred_times);
    const Panel panel = load_panel_file(
        input, opt_time(effect_mode ? eff_ttime_val : pred_ttime_val));

    std::ifstream in(fit_path);
    if (!in) throw ValidationError("cannot open '" + fit_path + "'");
    nlohmann::json j;
    in >> j;
    Matrix pred;
    if (j.contains("checkpoint")) {
      const NCSCModel model =
          load_ncsc_model(j.at("checkpoint").get<std::string>());
      pred = ctrlpath::predict(model, panel, times);
    } else if (j.at("method") == "mc") {
      const Vector grid = j.at("grid").get<Vector>();
      MCModel model;
      model.mu = j.at("mu").get<double>();
      const auto rows = j.at("completed").get<std::vector<Vector>>();
      model.completed = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), model.completed.row(i));
      pred = predict_baseline(model, grid, times, panel.dims);
    } else {
      const SCWeights weights = load_baseline_fit(fit_path);
      const auto aligned = align_panel(panel, times);
      pred = predict_baseline(weights, aligned, times, times);
    }

    if (!effect_mode) {
      write_text_atomically(out_path, trajectory_csv(times, pred));
      std::cout << "wrote " << out_path << "\n";
      return 0;
    }
    for (double t : times)
      if (!(t > panel.treatment_time))
        throw ValidationError("effect: all times must be after the treatment time");
    const SplinePath observed = fit_spline(panel.treated());
    Matrix tau(times.size(), panel.dims);
    std::vector<double> buf(observed.channels());
    for (std::size_t k = 0; k < times.size(); ++k) {
      observed.eval_into(times[k], buf.data());
      for (std::size_t c = 0; c < panel.dims; ++c)
        tau(k, c) = buf[c] - pred(k, c);
    }
    write_text_atomically(out_path, trajectory_csv(times, tau));
    std::cout << "wrote " << out_path << "\n";
    return 0;
  }

  if (compare->parsed()) {
    const auto methods = split_list(cmp_methods);
    std::vector<ExperimentReport> reports;
    if (!cmp_simulate.empty()) {
      if (cmp_simulate != "lorenz")
        throw ValidationError("--simulate supports only 'lorenz'");
      BenchmarkConfig bench;
      bench.lorenz = cmp_lorenz;
      bench.regimes = split_list(cmp_regimes);
      bench.n_runs = cmp_runs;
      bench.train = cmp_train.resolve();
      bench.seed = cmp_seed;
      reports = run_lorenz_benchmark(bench, methods);
    } else if (!cmp_input.empty()) {
      const Panel panel = load_panel_file(cmp_input, opt_time(cmp_ttime_val));
      const std::string truth_path =
          cmp_truth.empty() ? truth_path_for(cmp_input) : cmp_truth;
      if (!cmp_augment && std::filesystem::exists(truth_path)) {
        TruthComparisonConfig tc;
        tc.n_runs = cmp_runs;
        tc.train = cmp_train.resolve();
        tc.seed = cmp_seed;
        reports = run_truth_comparison(panel, load_series_file(truth_path),
                                       methods, tc);
      } else {
        PanelStudyConfig ps;
        ps.n_runs = cmp_runs;
        ps.train = cmp_train.resolve();
        ps.seed = cmp_seed;
        reports = run_panel_study(panel, methods, ps);
      }
    } else {
      throw ValidationError("compare needs --input or --simulate");
    }
    std::ostringstream json_out, csv_out;
    write_reports_json(json_out, reports);
    write_reports_csv(csv_out, reports);
    write_text_atomically(cmp_out, json_out.str());
    write_text_atomically(with_extension(cmp_out, ".timings.csv"), csv_out.str());
    std::cout << "wrote " << cmp_out << "\n";
    return 0;
  }

  if (consistency->parsed()) {
    const Panel panel = load_panel_file(con_input, opt_time(con_ttime_val));
    const WeightConsistencyReport rep =
        weight_consistency(panel, con_train.resolve(), con_runs, con_seed);
    nlohmann::ordered_json j;
    j["control_ids"] = rep.control_ids;
    j["mean_abs_w"] = rep.mean_abs_w;
    j["std_abs_w"] = rep.std_abs_w;
    j["active_sets"] = rep.active_sets;
    j["modal_active_set"] = rep.modal_active_set;
    j["support_agreement"] = rep.support_agreement;
    j["seeds"] = rep.seeds;
    write_text_atomically(con_out, j.dump(2) + "\n");
    std::cout << "wrote " << con_out << "\n";
    return 0;
  }

  if (profile->parsed()) {
    std::vector<std::size_t> grid;
    for (const auto& tok : split_list(prof_grid)) grid.push_back(std::stoul(tok));
    prof_cfg.train = prof_train.resolve();
    prof_cfg.seed = prof_seed;
    const RuntimeProfile prof = runtime_profile(prof_axis, grid, prof_cfg);
    std::ostringstream csv;
    csv << "axis,value,seconds\n";
    for (std::size_t i = 0; i < prof.grid.size(); ++i)
      csv << prof.axis << ',' << prof.grid[i] << ',' << prof.seconds[i] << "\n";
    write_text_atomically(prof_out, csv.str());
    std::cout << "wrote " << prof_out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ctrlpath::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
