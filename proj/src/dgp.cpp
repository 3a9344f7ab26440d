#include "ctrlpath/dgp.hpp"

#include <algorithm>
#include <cmath>

#include "ctrlpath/errors.hpp"
#include "ctrlpath/kernels.hpp"
#include "ctrlpath/rk4.hpp"
#include "ctrlpath/rng.hpp"

namespace ctrlpath {

void LorenzConfig::validate() const {
  if (d < 4) throw ValidationError("lorenz: d must be >= 4");
  if (!(rk_step > 0.0) || rk_step > sample_spacing)
    throw ValidationError("lorenz: need 0 < rk_step <= sample_spacing");
  if (!(t_treat < horizon)) throw ValidationError("lorenz: t_treat must precede horizon");
  if (!(t_treat > 0.0)) throw ValidationError("lorenz: t_treat must be positive");
  if (n_controls == 0) throw ValidationError("lorenz: need at least one control");
}

std::vector<double> lorenz_rhs(const std::vector<double>& state, double forcing) {
  const std::size_t d = state.size();
  if (d < 4) throw ValidationError("lorenz_rhs: d must be >= 4");
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double xp1 = state[(i + 1) % d];
    const double xm2 = state[(i + d - 2) % d];
    const double xm1 = state[(i + d - 1) % d];
    out[i] = (xp1 - xm2) * xm1 - state[i] + forcing;
  }
  return out;
}

namespace {

void lorenz_rhs_into(const double* x, std::size_t d, double forcing, double* out) {
  for (std::size_t i = 0; i < d; ++i) {
    const double xp1 = x[(i + 1) % d];
    const double xm2 = x[(i + d - 2) % d];
    const double xm1 = x[(i + d - 1) % d];
    out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
  }
}

// Integrates one Lorenz system over the sample grid, splitting every segment
// at t_treat so runs with f_post == f_pre reproduce untreated runs bit for
// bit. Records the first state dimension at each sample time.
std::vector<double> integrate_lorenz_dim0(const LorenzConfig& cfg,
                                          std::vector<double> state,
                                          const std::vector<double>& samples,
                                          double f_pre, double f_post) {
  Rk4Workspace ws;
  std::vector<double> observed;
  observed.reserve(samples.size());
  double t = samples.front();
  observed.push_back(state[0]);

  auto advance = [&](double target, double forcing) {
    const double len = target - t;
    if (len <= 0.0) return;
    const auto steps = static_cast<std::size_t>(std::ceil(len / cfg.rk_step - 1e-12));
    const double h = len / static_cast<double>(std::max<std::size_t>(steps, 1));
    auto rhs = [&](double, const double* y, double* dy) {
      lorenz_rhs_into(y, cfg.d, forcing, dy);
    };
    for (std::size_t s = 0; s < std::max<std::size_t>(steps, 1); ++s)
      rk4_38_step(rhs, t + static_cast<double>(s) * h, h, state, ws);
    t = target;
  };

  for (std::size_t k = 1; k < samples.size(); ++k) {
    const double target = samples[k];
    if (t < cfg.t_treat && target > cfg.t_treat) {
      advance(cfg.t_treat, f_pre);
      advance(target, f_post);
    } else {
      advance(target, t < cfg.t_treat ? f_pre : f_post);
    }
    observed.push_back(state[0]);
  }
  return observed;
}

}  // namespace

SimulatedPanel simulate_lorenz(const LorenzConfig& config) {
  config.validate();
  const auto n_samples = static_cast<std::size_t>(
      std::floor(config.horizon / config.sample_spacing + 1e-9)) + 1;
  std::vector<double> samples(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k)
    samples[k] = static_cast<double>(k) * config.sample_spacing;

  auto initial_state = [&](std::size_t unit) {
    Rng rng(derive_seed(config.seed, unit));
    std::vector<double> x(config.d);
    for (auto& v : x) v = rng.normal();
    return x;
  };

  // unit 0 observed (forcing switches), unit 1..n controls, last = truth.
  const std::size_t n_tasks = config.n_controls + 2;
  std::vector<std::vector<double>> traces(n_tasks);
  kernels::parallel_for(n_tasks, [&](std::size_t task) {
    if (task == 0) {
      traces[0] = integrate_lorenz_dim0(config, initial_state(0), samples,
                                        config.f_control, config.f_treated);
    } else if (task == n_tasks - 1) {
      traces[task] = integrate_lorenz_dim0(config, initial_state(0), samples,
                                           config.f_control, config.f_control);
    } else {
      traces[task] = integrate_lorenz_dim0(config, initial_state(task), samples,
                                           config.f_control, config.f_control);
    }
  });

  SimulatedPanel out;
  out.panel.dims = 1;
  out.panel.treatment_time = config.t_treat;
  auto make_unit = [&](const std::string& id, const std::vector<double>& trace) {
    UnitSeries u;
    u.unit_id = id;
    u.times = samples;
    u.values = Matrix(n_samples, 1);
    for (std::size_t k = 0; k < n_samples; ++k) u.values(k, 0) = trace[k];
    return u;
  };
  out.panel.units.push_back(make_unit("treated", traces[0]));
  for (std::size_t i = 1; i <= config.n_controls; ++i)
    out.panel.units.push_back(make_unit("control" + std::to_string(i), traces[i]));
  out.panel.finalize();
  out.truth = make_unit("truth", traces[n_tasks - 1]);
  return out;
}

// ---------------------------------------------------------------------------
// Linear DGP

double PiecewiseConstant::operator()(double t) const {
  if (values.size() != breaks.size() + 1)
    throw ValidationError("PiecewiseConstant: values must be breaks+1 long");
  const auto it = std::upper_bound(breaks.begin(), breaks.end(), t);
  return values[static_cast<std::size_t>(it - breaks.begin())];
}

void LinearDGPConfig::validate() const {
  if (n_units < 2) throw ValidationError("linear dgp: need >= 2 units");
  if (true_weights.size() != n_units - 1)
    throw ValidationError("linear dgp: true_weights must have n_units-1 entries");
  if (y0.size() != n_units)
    throw ValidationError("linear dgp: y0 must have n_units entries");
  if (!(noise_std >= 0.0)) throw ValidationError("linear dgp: noise_std must be >= 0");
  if (!all_finite(true_weights) || !all_finite(y0))
    throw ValidationError("linear dgp: non-finite parameters");
  double combo = 0.0;
  for (std::size_t i = 0; i + 1 < n_units; ++i) combo += true_weights[i] * y0[i + 1];
  const double scale = std::max(1.0, std::abs(y0[0]));
  if (std::abs(y0[0] - combo) > 1e-12 * scale)
    throw ValidationError("linear dgp: y0[0] must equal sum of weighted control y0");
}

SimulatedPanel simulate_linear(const LinearDGPConfig& config,
                               const std::vector<double>& t_grid) {
  config.validate();
  if (t_grid.size() < 2) throw ValidationError("linear dgp: grid needs >= 2 points");
  for (std::size_t k = 0; k + 1 < t_grid.size(); ++k)
    if (!(t_grid[k] < t_grid[k + 1]))
      throw ValidationError("linear dgp: grid not strictly increasing");

  const std::size_t n = config.n_units;
  const std::size_t m = t_grid.size();
  Matrix y(n, m);
  for (std::size_t i = 0; i < n; ++i) y(i, 0) = config.y0[i];

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    rngs.emplace_back(derive_seed(config.seed, i));

  // Exact per-interval solution with alpha and noise frozen at the interval
  // start: y(t+h) = y e^{ah} + z (e^{ah}-1)/a.
  for (std::size_t k = 0; k + 1 < m; ++k) {
    const double h = t_grid[k + 1] - t_grid[k];
    const double a = config.alpha(t_grid[k]);
    const double growth = std::expm1(a * h);
    const double noise_gain = (std::abs(a) > 1e-14) ? growth / a : h;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = config.noise_std > 0.0
                           ? rngs[i].normal(0.0, config.noise_std)
                           : 0.0;
      y(i, k + 1) = y(i, k) + growth * y(i, k) + noise_gain * z;
    }
  }

  SimulatedPanel out;
  out.panel.dims = 1;
  out.panel.treatment_time = config.t_treat;
  for (std::size_t i = 0; i < n; ++i) {
    UnitSeries u;
    u.unit_id = i == 0 ? "treated" : "control" + std::to_string(i);
    u.times = t_grid;
    u.values = Matrix(m, 1);
    for (std::size_t k = 0; k < m; ++k) u.values(k, 0) = y(i, k);
    out.panel.units.push_back(std::move(u));
  }
  out.panel.finalize();
  // No intervention is simulated, so the counterfactual is the treated path.
  out.truth = out.panel.units.front();
  out.truth.unit_id = "truth";
  return out;
}

}  // namespace ctrlpath
