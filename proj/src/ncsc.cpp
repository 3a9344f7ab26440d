#include "ctrlpath/ncsc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ctrlpath/baselines.hpp"
#include "ctrlpath/errors.hpp"

namespace ctrlpath {

// ---------------------------------------------------------------------------
// Model plumbing

std::size_t NCSCModel::param_count() const {
  return g_eta.param_count() + f_theta.param_count() + h_nu.param_count() +
         w_diag.size();
}

void NCSCModel::pack(double* out) const {
  g_eta.pack(out + g_offset());
  f_theta.pack(out + f_offset());
  h_nu.pack(out + h_offset());
  std::copy(w_diag.begin(), w_diag.end(), out + w_offset());
}

void NCSCModel::unpack(const double* in) {
  g_eta.unpack(in + g_offset());
  f_theta.unpack(in + f_offset());
  h_nu.unpack(in + h_offset());
  std::copy(in + w_offset(), in + w_offset() + w_diag.size(), w_diag.begin());
}

std::vector<std::size_t> NCSCModel::active_set(double eps) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < w_diag.size(); ++i)
    if (std::abs(w_diag[i]) > eps) out.push_back(i);
  return out;
}

void NCSCModel::validate() const {
  if (g_eta.input_dim() != d || g_eta.output_dim() != latent_dim ||
      f_theta.input_dim() != latent_dim ||
      f_theta.output_dim() != latent_dim * driving_channels() ||
      h_nu.input_dim() != latent_dim || h_nu.output_dim() != d ||
      w_diag.size() != n_controls)
    throw ValidationError("NCSCModel: inconsistent shapes");
  if (norm_shift.size() != d || norm_scale.size() != d)
    throw ValidationError("NCSCModel: inconsistent normalization vectors");
  for (double s : norm_scale)
    if (!(s > 0.0)) throw ValidationError("NCSCModel: norm_scale must be positive");
  if (!(time_scale > 0.0)) throw ValidationError("NCSCModel: time_scale must be positive");
  if (!all_finite(w_diag)) throw ValidationError("NCSCModel: non-finite w_diag");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("TrainConfig: lr must be positive");
  if (!(lambda_l1 >= 0.0)) throw ValidationError("TrainConfig: lambda_l1 must be >= 0");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw ValidationError("TrainConfig: lambda_grid values must be >= 0");
  if (epochs == 0) throw ValidationError("TrainConfig: epochs must be >= 1");
  if (!(solver_step >= 0.0) || !std::isfinite(solver_step))
    throw ValidationError("TrainConfig: bad solver_step");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ValidationError("TrainConfig: validation_fraction must be in [0, 1)");
  if (latent_dim == 0) throw ValidationError("TrainConfig: latent_dim must be >= 1");
  for (double p : relevance_weights)
    if (!(p > 0.0)) throw ValidationError("TrainConfig: relevance weights must be positive");
}

NCSCModel make_ncsc_model(std::size_t d, std::size_t n_controls,
                          const TrainConfig& config, std::uint64_t seed) {
  if (d == 0 || n_controls == 0)
    throw ValidationError("make_ncsc_model: need d >= 1 and n_controls >= 1");
  NCSCModel model;
  model.d = d;
  model.n_controls = n_controls;
  model.latent_dim = config.latent_dim;

  auto dims = [](std::size_t in, const std::vector<std::size_t>& hidden,
                 std::size_t out) {
    std::vector<std::size_t> v{in};
    v.insert(v.end(), hidden.begin(), hidden.end());
    v.push_back(out);
    return v;
  };
  model.g_eta = MLP::make(dims(d, config.g_hidden, model.latent_dim));
  model.f_theta = MLP::make(
      dims(model.latent_dim, config.f_hidden, model.latent_dim * model.driving_channels()));
  model.h_nu = MLP::make(dims(model.latent_dim, config.h_hidden, d));

  Rng rng(derive_seed(seed, 0xA11CEULL));
  model.g_eta.init_glorot(rng);
  model.f_theta.init_glorot(rng);
  model.h_nu.init_glorot(rng);

  // Start the model as the uniform-weight synthetic control of increments:
  // the embedding and readout pass the (normalized) observation through the
  // linear regime of the first elu units, the field's output layer holds a
  // constant identity block over the value channels with the time column at
  // zero, and every control carries weight 1/n. Gradient descent then refines
  // a sane estimator instead of escaping a random unstable one; hidden-layer
  // weights keep their random init so capacity revives as training needs it.
  const std::size_t pass = std::min({d, model.latent_dim,
                                     config.g_hidden.empty() ? d : config.g_hidden[0],
                                     config.h_hidden.empty() ? d : config.h_hidden[0]});
  const double elu_shift = 5.0;
  {
    // g: z_c = y_c for c < pass, exact while y_c > -elu_shift.
    MLP& g = model.g_eta;
    const std::size_t last = g.n_layers() - 1;
    Matrix& w_out = g.weights[last];
    std::fill(w_out.data(), w_out.data() + w_out.size(), 0.0);
    std::fill(g.biases[last].begin(), g.biases[last].end(), 0.0);
    if (g.n_layers() == 1) {
      for (std::size_t c = 0; c < pass; ++c) w_out(c, c) = 1.0;
    } else {
      Matrix& w_in = g.weights[0];
      for (std::size_t c = 0; c < pass; ++c) {
        for (std::size_t j = 0; j < w_in.cols(); ++j) w_in(c, j) = 0.0;
        w_in(c, c) = 1.0;
        g.biases[0][c] = elu_shift;
        w_out(c, c) = 1.0;
        g.biases[last][c] = -elu_shift;
      }
    }
  }
  {
    // h: reads latent coordinate c back out for c < pass.
    MLP& h = model.h_nu;
    const std::size_t last = h.n_layers() - 1;
    Matrix& w_out = h.weights[last];
    std::fill(w_out.data(), w_out.data() + w_out.size(), 0.0);
    std::fill(h.biases[last].begin(), h.biases[last].end(), 0.0);
    if (h.n_layers() == 1) {
      for (std::size_t c = 0; c < pass; ++c) w_out(c, c) = 1.0;
    } else {
      Matrix& w_in = h.weights[0];
      for (std::size_t c = 0; c < pass; ++c) {
        for (std::size_t j = 0; j < w_in.cols(); ++j) w_in(c, j) = 0.0;
        w_in(c, c) = 1.0;
        h.biases[0][c] = elu_shift;
        w_out(c, c) = 1.0;
        h.biases[last][c] = -elu_shift;
      }
    }
  }
  {
    // f: constant field, identity block over each control's value channels.
    MLP& f = model.f_theta;
    const std::size_t last = f.n_layers() - 1;
    Matrix& w_out = f.weights[last];
    std::fill(w_out.data(), w_out.data() + w_out.size(), 0.0);
    auto& b_out = f.biases[last];
    std::fill(b_out.begin(), b_out.end(), 0.0);
    const std::size_t channels = model.driving_channels();
    for (std::size_t i = 0; i < n_controls; ++i)
      for (std::size_t c = 0; c < pass; ++c)
        b_out[c * channels + i * d + c] = 1.0;
  }
  model.w_diag.assign(n_controls, 1.0 / static_cast<double>(n_controls));
  model.norm_shift.assign(d, 0.0);
  model.norm_scale.assign(d, 1.0);
  model.time_scale = 1.0;
  return model;
}

// ---------------------------------------------------------------------------
// Solver grid

namespace {

struct SolveGrid {
  Vector nodes;
  std::vector<std::size_t> eval_nodes;  // node index of each t_eval entry
  Matrix stage_raw;  // (steps * 4) x channels, normalized unweighted derivs
};

void spline_union_span(const std::vector<SplinePath>& splines, double& lo,
                       double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : splines) {
    lo = std::min(lo, s.t_begin());
    hi = std::max(hi, s.t_end());
  }
}

// Normalized driving derivative at time t: value channels divided by the
// model's per-dimension scale, then the time channel at 1/time_scale.
void raw_driving_derivative(const NCSCModel& model,
                            const std::vector<SplinePath>& splines, double t,
                            std::vector<double>& chan_buf, double* out) {
  const std::size_t d = model.d;
  for (std::size_t i = 0; i < splines.size(); ++i) {
    splines[i].derivative_into(t, chan_buf.data());
    for (std::size_t c = 0; c < d; ++c)
      out[i * d + c] = chan_buf[c] / model.norm_scale[c];
  }
  out[model.driving_channels() - 1] = 1.0 / model.time_scale;
}

SolveGrid build_solve_grid(const NCSCModel& model,
                           const std::vector<SplinePath>& splines,
                           const Vector& t_eval, double step) {
  if (t_eval.empty()) throw ValidationError("solve_forward: empty t_eval");
  for (std::size_t j = 0; j + 1 < t_eval.size(); ++j)
    if (!(t_eval[j] < t_eval[j + 1]))
      throw ValidationError("solve_forward: t_eval not strictly ascending");
  if (!(step > 0.0)) throw ValidationError("solve_forward: solver step must be positive");
  double lo, hi;
  spline_union_span(splines, lo, hi);
  const double slack = 1e-9 * std::max(1.0, hi - lo);
  if (t_eval.front() < lo - slack || t_eval.back() > hi + slack)
    throw ValidationError("solve_forward: evaluation times outside spline span");

  const double t0 = t_eval.front();
  const double t1 = t_eval.back();
  const double tol = 1e-9 * step;

  // Merge step points into the evaluation times; an eval time absorbs any
  // step point within tol so reported states stay exact solver states.
  SolveGrid grid;
  grid.eval_nodes.resize(t_eval.size());
  std::size_t next_eval = 0;
  std::size_t k = 1;
  double t = t0;
  grid.nodes.push_back(t0);
  grid.eval_nodes[next_eval++] = 0;
  while (t < t1 - tol) {
    const double t_step = t0 + static_cast<double>(k) * step;
    const double t_ev = next_eval < t_eval.size()
                            ? t_eval[next_eval]
                            : std::numeric_limits<double>::infinity();
    double next;
    if (t_step < t_ev - tol && t_step < t1 - tol) {
      next = t_step;
      ++k;
    } else {
      next = t_ev;
      if (t_step <= t_ev + tol) ++k;  // step point merged into the eval time
      grid.eval_nodes[next_eval++] = grid.nodes.size();
    }
    grid.nodes.push_back(next);
    t = next;
  }

  const std::size_t steps = grid.nodes.size() - 1;
  const std::size_t channels = model.driving_channels();
  grid.stage_raw = Matrix(steps * 4, channels);
  std::vector<double> chan_buf(model.d + 1);
  for (std::size_t s = 0; s < steps; ++s) {
    const double a = grid.nodes[s];
    const double h = grid.nodes[s + 1] - a;
    const double stage_t[4] = {a, a + h / 3.0, a + 2.0 * h / 3.0, a + h};
    for (std::size_t st = 0; st < 4; ++st)
      raw_driving_derivative(model, splines, stage_t[st], chan_buf,
                             grid.stage_raw.row(s * 4 + st));
  }
  return grid;
}

// dz/dt given the field output (flat l x C) and the weighted driving vector.
inline void apply_field(const double* field_out, const double* u, std::size_t l,
                        std::size_t channels, double* rhs) {
  for (std::size_t r = 0; r < l; ++r)
    rhs[r] = dot(field_out + r * channels, u, channels);
}

inline void weighted_driving(const NCSCModel& model, const double* raw, double* u) {
  const std::size_t d = model.d;
  const std::size_t channels = model.driving_channels();
  for (std::size_t i = 0; i < model.n_controls; ++i)
    for (std::size_t c = 0; c < d; ++c) u[i * d + c] = model.w_diag[i] * raw[i * d + c];
  u[channels - 1] = raw[channels - 1];
}

struct SolverScratch {
  MLPWorkspace f_ws, g_ws, h_ws;
  Vector u, k1, k2, k3, k4, stage, rhs_buf;
};

void forward_states(const NCSCModel& model, const SolveGrid& grid, const Vector& z0,
                    SolverScratch& ws, Matrix& states) {
  const std::size_t l = model.latent_dim;
  const std::size_t channels = model.driving_channels();
  states = Matrix(grid.nodes.size(), l);
  std::copy(z0.begin(), z0.end(), states.row(0));
  ws.u.resize(channels);
  ws.k1.resize(l);
  ws.k2.resize(l);
  ws.k3.resize(l);
  ws.k4.resize(l);
  ws.stage.resize(l);

  Vector z(z0);
  for (std::size_t s = 0; s + 1 < grid.nodes.size(); ++s) {
    const double h = grid.nodes[s + 1] - grid.nodes[s];
    auto stage_rhs = [&](const Vector& zs, std::size_t st, Vector& out) {
      weighted_driving(model, grid.stage_raw.row(s * 4 + st), ws.u.data());
      const Vector& field = mlp_forward_ws(model.f_theta, zs, ws.f_ws);
      apply_field(field.data(), ws.u.data(), l, channels, out.data());
    };
    stage_rhs(z, 0, ws.k1);
    for (std::size_t i = 0; i < l; ++i) ws.stage[i] = z[i] + h * ws.k1[i] / 3.0;
    stage_rhs(ws.stage, 1, ws.k2);
    for (std::size_t i = 0; i < l; ++i)
      ws.stage[i] = z[i] + h * (-ws.k1[i] / 3.0 + ws.k2[i]);
    stage_rhs(ws.stage, 2, ws.k3);
    for (std::size_t i = 0; i < l; ++i)
      ws.stage[i] = z[i] + h * (ws.k1[i] - ws.k2[i] + ws.k3[i]);
    stage_rhs(ws.stage, 3, ws.k4);
    for (std::size_t i = 0; i < l; ++i)
      z[i] += h * (ws.k1[i] + 3.0 * ws.k2[i] + 3.0 * ws.k3[i] + ws.k4[i]) / 8.0;
    if (!all_finite(z) ||
        norm2(z.data(), l) > 1e8)
      throw NumericalError("cde solver diverged at step " + std::to_string(s + 1) +
                           " (t=" + std::to_string(grid.nodes[s + 1]) + ")");
    std::copy(z.begin(), z.end(), states.row(s + 1));
  }
}

Vector normalized_observation(const NCSCModel& model, const double* y) {
  Vector x(model.d);
  for (std::size_t c = 0; c < model.d; ++c)
    x[c] = (y[c] - model.norm_shift[c]) / model.norm_scale[c];
  return x;
}

// Reverse sweep through one RK4 step. `adjoint` enters as dL/dz_{s+1} and
// leaves as dL/dz_s; field/readout parameter gradients and w gradients are
// accumulated into grad (flat model packing).
void backward_step(const NCSCModel& model, const SolveGrid& grid, std::size_t s,
                   const double* z_start, SolverScratch& ws, Vector& adjoint,
                   double* grad) {
  const std::size_t l = model.latent_dim;
  const std::size_t d = model.d;
  const std::size_t channels = model.driving_channels();
  const double h = grid.nodes[s + 1] - grid.nodes[s];

  // Recompute the stage inputs.
  Vector s1(z_start, z_start + l);
  auto stage_rhs = [&](const Vector& zs, std::size_t st, Vector& out) {
    weighted_driving(model, grid.stage_raw.row(s * 4 + st), ws.u.data());
    const Vector& field = mlp_forward_ws(model.f_theta, zs, ws.f_ws);
    apply_field(field.data(), ws.u.data(), l, channels, out.data());
  };
  stage_rhs(s1, 0, ws.k1);
  Vector s2(l), s3(l), s4(l);
  for (std::size_t i = 0; i < l; ++i) s2[i] = s1[i] + h * ws.k1[i] / 3.0;
  stage_rhs(s2, 1, ws.k2);
  for (std::size_t i = 0; i < l; ++i) s3[i] = s1[i] + h * (-ws.k1[i] / 3.0 + ws.k2[i]);
  stage_rhs(s3, 2, ws.k3);
  for (std::size_t i = 0; i < l; ++i)
    s4[i] = s1[i] + h * (ws.k1[i] - ws.k2[i] + ws.k3[i]);

  double* f_grad = grad + model.f_offset();
  double* w_grad = grad + model.w_offset();

  // VJP of one stage: cotangent lambda on k = f(z_stage) * u.
  Vector cot_out(l * channels);
  Vector ds(l);
  auto stage_vjp = [&](const Vector& z_stage, std::size_t st, const Vector& lambda,
                       Vector& dz_out) {
    const double* raw = grid.stage_raw.row(s * 4 + st);
    weighted_driving(model, raw, ws.u.data());
    const Vector& field = mlp_forward_ws(model.f_theta, z_stage, ws.f_ws);
    // d<lambda, F u>/dF = lambda u^T; d/du = F^T lambda.
    for (std::size_t r = 0; r < l; ++r) {
      const double lr_ = lambda[r];
      double* row = cot_out.data() + r * channels;
      for (std::size_t c = 0; c < channels; ++c) row[c] = lr_ * ws.u[c];
    }
    dz_out.assign(l, 0.0);
    mlp_backward_ws(model.f_theta, ws.f_ws, cot_out, f_grad, dz_out.data());
    for (std::size_t i = 0; i < model.n_controls; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t ch = i * d + c;
        double q = 0.0;
        for (std::size_t r = 0; r < l; ++r) q += field[r * channels + ch] * lambda[r];
        acc += q * raw[ch];
      }
      w_grad[i] += acc;
    }
  };

  Vector lam(l), ds4(l), ds3(l), ds2(l), ds1(l);
  for (std::size_t i = 0; i < l; ++i) lam[i] = h / 8.0 * adjoint[i];
  stage_vjp(s4, 3, lam, ds4);
  for (std::size_t i = 0; i < l; ++i)
    lam[i] = 3.0 * h / 8.0 * adjoint[i] + h * ds4[i];
  stage_vjp(s3, 2, lam, ds3);
  for (std::size_t i = 0; i < l; ++i)
    lam[i] = 3.0 * h / 8.0 * adjoint[i] - h * ds4[i] + h * ds3[i];
  stage_vjp(s2, 1, lam, ds2);
  for (std::size_t i = 0; i < l; ++i)
    lam[i] = h / 8.0 * adjoint[i] + h * ds4[i] - h / 3.0 * ds3[i] + h / 3.0 * ds2[i];
  stage_vjp(s1, 0, lam, ds1);
  for (std::size_t i = 0; i < l; ++i)
    adjoint[i] += ds1[i] + ds2[i] + ds3[i] + ds4[i];
}

// Everything fit() and the gradient ops need for one panel.
struct TrainContext {
  std::vector<SplinePath> splines;
  SolveGrid grid;
  Vector y0_raw;             // treated first observation
  Vector t_eval;             // pre-treatment treated times
  Matrix y_obs;              // pre-treatment treated values
  std::vector<bool> in_train;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

double default_solver_step(const Panel& panel, double configured) {
  if (configured > 0.0) return configured;
  const double gap = panel.min_adjacent_gap();
  if (!(gap > 0.0) || !std::isfinite(gap))
    throw ValidationError("ncsc: cannot infer solver step from panel");
  return gap;
}

TrainContext make_context(const NCSCModel& model, const Panel& panel,
                          double solver_step, std::size_t n_val) {
  if (panel.units.empty() || panel.dims != model.d ||
      panel.n_controls() != model.n_controls)
    throw ValidationError("ncsc: panel does not match model shape");
  const std::size_t n_pre = panel.pretreatment_count();
  if (n_pre < 2)
    throw ValidationError("ncsc: treated unit needs >= 2 pre-treatment observations");

  TrainContext ctx;
  ctx.splines.reserve(panel.n_controls());
  for (std::size_t i = 0; i < panel.n_controls(); ++i)
    ctx.splines.push_back(fit_spline(panel.control(i)));

  const UnitSeries& treated = panel.treated();
  ctx.t_eval.assign(treated.times.begin(), treated.times.begin() + n_pre);
  ctx.y_obs = Matrix(n_pre, model.d);
  for (std::size_t j = 0; j < n_pre; ++j)
    for (std::size_t c = 0; c < model.d; ++c) ctx.y_obs(j, c) = treated.values(j, c);
  ctx.y0_raw.assign(treated.values.row(0), treated.values.row(0) + model.d);

  if (n_val >= n_pre) n_val = n_pre - 1;
  ctx.n_val = n_val;
  ctx.n_train = n_pre - n_val;
  ctx.in_train.assign(n_pre, true);
  for (std::size_t j = ctx.n_train; j < n_pre; ++j) ctx.in_train[j] = false;

  ctx.grid = build_solve_grid(model, ctx.splines, ctx.t_eval, solver_step);
  return ctx;
}

struct EpochResult {
  double train_mse = 0.0;
  double val_mse = 0.0;
};

// Forward solve + full reverse sweep. Returns gradients of the training MSE
// in `grad` (flat model packing) when grad is non-null.
EpochResult run_epoch(const NCSCModel& model, const TrainContext& ctx,
                      SolverScratch& ws, Matrix& states, double* grad) {
  const std::size_t l = model.latent_dim;
  const std::size_t d = model.d;

  const Vector x0 = normalized_observation(model, ctx.y0_raw.data());
  const Vector z0 = mlp_forward(model.g_eta, x0);
  forward_states(model, ctx.grid, z0, ws, states);

  // Predictions and error accumulation at the evaluation nodes.
  EpochResult res;
  Matrix resid(ctx.t_eval.size(), d);  // yhat_raw - y_obs
  for (std::size_t j = 0; j < ctx.t_eval.size(); ++j) {
    const double* z = states.row(ctx.grid.eval_nodes[j]);
    const Vector& yn = mlp_forward_ws(model.h_nu, std::span(z, l), ws.h_ws);
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double raw = yn[c] * model.norm_scale[c] + model.norm_shift[c];
      const double r = raw - ctx.y_obs(j, c);
      resid(j, c) = r;
      sq += r * r;
    }
    if (ctx.in_train[j])
      res.train_mse += sq;
    else
      res.val_mse += sq;
  }
  res.train_mse /= static_cast<double>(std::max<std::size_t>(ctx.n_train, 1));
  res.val_mse = ctx.n_val > 0 ? res.val_mse / static_cast<double>(ctx.n_val)
                              : std::numeric_limits<double>::quiet_NaN();
  if (!grad) return res;

  Vector adjoint(l, 0.0);
  Vector h_cot(d);
  double* h_grad = grad + model.h_offset();
  double* g_grad = grad + model.g_offset();
  std::ptrdiff_t next_eval = static_cast<std::ptrdiff_t>(ctx.t_eval.size()) - 1;
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(ctx.n_train, 1));
  for (std::size_t node = ctx.grid.nodes.size(); node-- > 0;) {
    while (next_eval >= 0 && ctx.grid.eval_nodes[next_eval] == node) {
      if (ctx.in_train[next_eval]) {
        const double* z = states.row(node);
        mlp_forward_ws(model.h_nu, std::span(z, l), ws.h_ws);
        for (std::size_t c = 0; c < d; ++c)
          h_cot[c] = 2.0 * inv_n * resid(next_eval, c) * model.norm_scale[c];
        mlp_backward_ws(model.h_nu, ws.h_ws, h_cot, h_grad, adjoint.data());
      }
      --next_eval;
    }
    if (node > 0)
      backward_step(model, ctx.grid, node - 1, states.row(node - 1), ws, adjoint, grad);
  }
  // Initial condition through the embedding.
  mlp_forward_ws(model.g_eta, x0, ws.g_ws);
  mlp_backward_ws(model.g_eta, ws.g_ws, adjoint, g_grad, nullptr);
  return res;
}

double l1_penalty(const NCSCModel& model, double lambda, const Vector& relevance) {
  double p = 0.0;
  for (std::size_t i = 0; i < model.w_diag.size(); ++i) {
    const double inv_rel = relevance.empty() ? 1.0 : 1.0 / relevance[i];
    p += inv_rel * std::abs(model.w_diag[i]);
  }
  return lambda * p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

Vector cde_rhs(const NCSCModel& model, std::span<const double> z, double t,
               const std::vector<SplinePath>& control_splines) {
  model.validate();
  if (z.size() != model.latent_dim) throw ValidationError("cde_rhs: bad latent size");
  if (!std::isfinite(t)) throw ValidationError("cde_rhs: non-finite t");
  if (control_splines.size() != model.n_controls)
    throw ValidationError("cde_rhs: wrong number of control splines");
  double lo, hi;
  spline_union_span(control_splines, lo, hi);
  const double slack = 1e-9 * std::max(1.0, hi - lo);
  if (t < lo - slack || t > hi + slack)
    throw ValidationError("cde_rhs: t outside all spline spans");

  const std::size_t channels = model.driving_channels();
  Vector raw(channels), u(channels);
  std::vector<double> chan_buf(model.d + 1);
  raw_driving_derivative(model, control_splines, t, chan_buf, raw.data());
  weighted_driving(model, raw.data(), u.data());
  const Vector field = mlp_forward(model.f_theta, z);
  Vector rhs(model.latent_dim);
  apply_field(field.data(), u.data(), model.latent_dim, channels, rhs.data());
  return rhs;
}

LatentTrajectory solve_forward(const NCSCModel& model,
                               const std::vector<SplinePath>& control_splines,
                               std::span<const double> y1_t0,
                               const Vector& t_eval, double solver_step) {
  model.validate();
  if (y1_t0.size() != model.d) throw ValidationError("solve_forward: bad y1_t0 size");
  if (control_splines.size() != model.n_controls)
    throw ValidationError("solve_forward: wrong number of control splines");
  SolveGrid grid = build_solve_grid(model, control_splines, t_eval, solver_step);
  const Vector x0 = normalized_observation(model, y1_t0.data());
  const Vector z0 = mlp_forward(model.g_eta, x0);
  SolverScratch ws;
  Matrix states;
  forward_states(model, grid, z0, ws, states);

  LatentTrajectory out;
  out.times = t_eval;
  out.z = Matrix(t_eval.size(), model.latent_dim);
  for (std::size_t j = 0; j < t_eval.size(); ++j)
    std::copy(states.row(grid.eval_nodes[j]),
              states.row(grid.eval_nodes[j]) + model.latent_dim, out.z.row(j));
  return out;
}

Matrix predict(const NCSCModel& model, const Panel& panel, const Vector& times,
               double solver_step) {
  model.validate();
  if (times.empty()) throw ValidationError("predict: empty times");
  const UnitSeries& treated = panel.treated();
  const double t0 = treated.times.front();
  if (times.front() < t0)
    throw ValidationError("predict: requested time precedes first treated observation");

  std::vector<SplinePath> splines;
  splines.reserve(panel.n_controls());
  for (std::size_t i = 0; i < panel.n_controls(); ++i)
    splines.push_back(fit_spline(panel.control(i)));

  Vector t_eval;
  bool prepended = false;
  if (times.front() > t0) {
    t_eval.push_back(t0);
    prepended = true;
  }
  t_eval.insert(t_eval.end(), times.begin(), times.end());

  const double step = default_solver_step(panel, solver_step);
  LatentTrajectory traj = solve_forward(
      model, splines, std::span(treated.values.row(0), model.d), t_eval, step);

  Matrix out(times.size(), model.d);
  MLPWorkspace h_ws;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double* z = traj.z.row(j + (prepended ? 1 : 0));
    const Vector& yn =
        mlp_forward_ws(model.h_nu, std::span(z, model.latent_dim), h_ws);
    for (std::size_t c = 0; c < model.d; ++c)
      out(j, c) = yn[c] * model.norm_scale[c] + model.norm_shift[c];
  }
  return out;
}

double loss(const NCSCModel& model, const Panel& panel, const TrainConfig& config) {
  model.validate();
  config.validate();
  const double step = default_solver_step(panel, config.solver_step);
  TrainContext ctx = make_context(model, panel, step, 0);
  SolverScratch ws;
  Matrix states;
  const EpochResult res = run_epoch(model, ctx, ws, states, nullptr);
  return res.train_mse + l1_penalty(model, config.lambda_l1, config.relevance_weights);
}

LossGrads loss_gradients(const NCSCModel& model, const Panel& panel,
                         const TrainConfig& config) {
  model.validate();
  config.validate();
  const double step = default_solver_step(panel, config.solver_step);
  TrainContext ctx = make_context(model, panel, step, 0);
  SolverScratch ws;
  Matrix states;
  Vector grad(model.param_count(), 0.0);
  const EpochResult res = run_epoch(model, ctx, ws, states, grad.data());
  if (!all_finite(grad)) throw NumericalError("loss_gradients: non-finite gradient");

  LossGrads out;
  out.g_eta.assign(grad.begin() + model.g_offset(),
                   grad.begin() + model.g_offset() + model.g_eta.param_count());
  out.f_theta.assign(grad.begin() + model.f_offset(),
                     grad.begin() + model.f_offset() + model.f_theta.param_count());
  out.h_nu.assign(grad.begin() + model.h_offset(),
                  grad.begin() + model.h_offset() + model.h_nu.param_count());
  out.w_diag.assign(grad.begin() + model.w_offset(), grad.end());
  out.loss_value =
      res.train_mse + l1_penalty(model, config.lambda_l1, config.relevance_weights);
  return out;
}

FitResult fit(const Panel& panel, const TrainConfig& config) {
  config.validate();
  if (panel.units.size() < 2)
    throw ValidationError("ncsc fit: panel needs at least one control unit");
  if (!config.relevance_weights.empty() &&
      config.relevance_weights.size() != panel.n_controls())
    throw ValidationError("ncsc fit: relevance weights size mismatch");

  const double step = default_solver_step(panel, config.solver_step);
  const std::size_t n_pre = panel.pretreatment_count();
  std::size_t n_val = 0;
  if (config.validation_fraction > 0.0 && n_pre >= 2) {
    n_val = static_cast<std::size_t>(
        std::floor(config.validation_fraction * static_cast<double>(n_pre) + 0.5));
    n_val = std::clamp<std::size_t>(n_val, 1, n_pre - 1);
  }

  // Panel-level normalization from pre-treatment values of all units.
  Vector shift(panel.dims, 0.0), scale(panel.dims, 1.0);
  double time_scale = 1.0;
  if (config.normalize) {
    Vector sum(panel.dims, 0.0), sumsq(panel.dims, 0.0);
    std::size_t count = 0;
    for (const auto& u : panel.units)
      for (std::size_t j = 0; j < u.times.size(); ++j) {
        if (!(u.times[j] < panel.treatment_time)) continue;
        ++count;
        for (std::size_t c = 0; c < panel.dims; ++c) {
          sum[c] += u.values(j, c);
          sumsq[c] += u.values(j, c) * u.values(j, c);
        }
      }
    if (count > 0)
      for (std::size_t c = 0; c < panel.dims; ++c) {
        shift[c] = sum[c] / static_cast<double>(count);
        const double var =
            std::max(0.0, sumsq[c] / static_cast<double>(count) - shift[c] * shift[c]);
        scale[c] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
      }
    time_scale = std::max(panel.t_end - panel.t_begin, 1e-12);
  }

  // Control weights warm-start at the discrete synthetic control solution:
  // the model then begins as an increment-form synthetic control and training
  // refines it, rather than having to escape a random initial field.
  Vector w_start;
  Vector intercept_start;
  if (config.warm_start_sc) {
    Vector grid_pre;
    for (double t : panel.treated().times)
      if (t < panel.treatment_time) grid_pre.push_back(t);
    const auto aligned = align_panel(panel, grid_pre);
    const Matrix pre_mat = stack_controls(aligned, grid_pre, panel.treatment_time);
    const Vector target = stack_treated(aligned, grid_pre, panel.treatment_time);
    w_start = fit_sc(pre_mat, target).w;
    // Readout intercept that turns the increment form anchored at t0 into
    // the level form sum_i w_i Y_i(t) exactly (in normalized units).
    intercept_start.assign(panel.dims, 0.0);
    for (std::size_t c = 0; c < panel.dims; ++c) {
      double combo0 = 0.0;
      for (std::size_t i = 0; i < w_start.size(); ++i)
        combo0 += w_start[i] * (aligned[i + 1](0, c) - shift[c]) / scale[c];
      const double treated0 = (panel.treated().values(0, c) - shift[c]) / scale[c];
      intercept_start[c] = combo0 - treated0;
    }
  }

  Vector lambdas = config.lambda_grid.empty() ? Vector{config.lambda_l1}
                                              : config.lambda_grid;

  struct Candidate {
    Vector params;
    double selection = std::numeric_limits<double>::infinity();
    double train_mse = std::numeric_limits<double>::infinity();
    double lambda = 0.0;
    Vector history;
  };
  std::vector<Candidate> candidates;

  for (const double lambda : lambdas) {
    NCSCModel model =
        make_ncsc_model(panel.dims, panel.n_controls(), config, config.seed);
    model.norm_shift = shift;
    model.norm_scale = scale;
    model.time_scale = time_scale;
    if (!w_start.empty()) {
      model.w_diag = w_start;
      auto& h_bias = model.h_nu.biases.back();
      for (std::size_t c = 0; c < panel.dims; ++c) h_bias[c] += intercept_start[c];
    }
    TrainContext ctx = make_context(model, panel, step, n_val);

    // Proximal step threshold lr*lambda, with lr taken per coordinate as the
    // step size Adam actually applies (lr / (sqrt(v-hat) + eps)); a fixed
    // threshold would be no match for Adam's normalized updates.
    Vector thresholds(model.n_controls, 0.0);
    auto fill_thresholds = [&](const AdamState& adam_state, std::size_t w_offset) {
      const double bc2 =
          1.0 - std::pow(adam_state.beta2,
                         static_cast<double>(std::max<std::int64_t>(
                             adam_state.step_count, 1)));
      for (std::size_t i = 0; i < model.n_controls; ++i) {
        const double inv_rel = config.relevance_weights.empty()
                                   ? 1.0
                                   : 1.0 / config.relevance_weights[i];
        const double vhat = adam_state.v[w_offset + i] / bc2;
        const double step = adam_state.lr / (std::sqrt(vhat) + adam_state.eps);
        thresholds[i] = step * lambda * inv_rel;
      }
    };

    const std::size_t n_params = model.param_count();
    Vector params(n_params), grad(n_params);
    model.pack(params.data());
    AdamState adam(n_params, config.lr);

    Candidate cand;
    cand.lambda = lambda;
    cand.params = params;
    std::size_t since_improve = 0;
    std::size_t halvings = 0;
    SolverScratch ws;
    Matrix states;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      bool diverged = false;
      EpochResult res;
      std::fill(grad.begin(), grad.end(), 0.0);
      try {
        model.unpack(params.data());
        res = run_epoch(model, ctx, ws, states, grad.data());
        if (!all_finite(grad) || !std::isfinite(res.train_mse)) diverged = true;
      } catch (const NumericalError&) {
        diverged = true;
      }

      if (diverged) {
        ++halvings;
        if (halvings > config.max_lr_halvings)
          throw NumericalError(
              "ncsc fit: training diverged repeatedly; try a smaller learning rate");
        adam = AdamState(n_params, adam.lr * 0.5);
        params = cand.params;  // restart from the best parameters so far
        since_improve = 0;
        continue;
      }

      const double selection = n_val > 0 ? res.val_mse : res.train_mse;
      cand.history.push_back(res.train_mse +
                             l1_penalty(model, lambda, config.relevance_weights));
      if (selection < cand.selection * (1.0 - config.improvement_rtol)) {
        cand.selection = selection;
        cand.train_mse = res.train_mse;
        cand.params = params;
        since_improve = 0;
      } else if (++since_improve >= config.patience) {
        ++halvings;
        if (halvings > config.max_lr_halvings) break;
        adam.lr *= 0.5;
        since_improve = 0;
      }

      try {
        adam_step(adam, params, grad);
      } catch (const NumericalError&) {
        ++halvings;
        if (halvings > config.max_lr_halvings)
          throw NumericalError(
              "ncsc fit: training diverged repeatedly; try a smaller learning rate");
        adam = AdamState(n_params, adam.lr * 0.5);
        params = cand.params;
        since_improve = 0;
        continue;
      }
      fill_thresholds(adam, model.w_offset());
      prox_l1_inplace(
          std::span(params.data() + model.w_offset(), model.n_controls), thresholds);
    }

    candidates.push_back(std::move(cand));
  }

  // Penalty selected by validation error; grid order breaks exact ties.
  std::size_t chosen = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].selection < candidates[chosen].selection) chosen = i;
  Candidate best_overall = std::move(candidates[chosen]);

  FitResult out;
  out.model = make_ncsc_model(panel.dims, panel.n_controls(), config, config.seed);
  out.model.norm_shift = shift;
  out.model.norm_scale = scale;
  out.model.time_scale = time_scale;
  out.model.unpack(best_overall.params.data());
  out.loss_history = std::move(best_overall.history);
  out.selected_lambda = best_overall.lambda;
  out.active_set = out.model.active_set();
  out.train_error = best_overall.train_mse;
  out.validation_error = n_val > 0 ? best_overall.selection
                                   : std::numeric_limits<double>::quiet_NaN();
  out.seed = config.seed;
  return out;
}

TreatmentEffectSeries treatment_effect(const FitResult& fit, const Panel& panel,
                                       const Vector& times) {
  if (times.empty()) throw ValidationError("treatment_effect: empty times");
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (!(times[j] > panel.treatment_time))
      throw ValidationError("treatment_effect: times must be after the treatment time");
    if (j + 1 < times.size() && !(times[j] < times[j + 1]))
      throw ValidationError("treatment_effect: times must be ascending");
  }
  const UnitSeries& treated = panel.treated();
  bool has_post = false;
  for (double t : treated.times)
    if (t > panel.treatment_time) {
      has_post = true;
      break;
    }
  if (!has_post)
    throw ValidationError("treatment_effect: no post-treatment observations");

  const SplinePath observed = fit_spline(treated);
  const Matrix counterfactual = predict(fit.model, panel, times);
  TreatmentEffectSeries out;
  out.times = times;
  out.tau = Matrix(times.size(), panel.dims);
  std::vector<double> buf(observed.channels());
  for (std::size_t j = 0; j < times.size(); ++j) {
    observed.eval_into(times[j], buf.data());
    for (std::size_t c = 0; c < panel.dims; ++c)
      out.tau(j, c) = buf[c] - counterfactual(j, c);
  }
  return out;
}

Vector covariate_relevance_weights(const Matrix& covariates) {
  const std::size_t n = covariates.rows();
  const std::size_t p = covariates.cols();
  if (n < 2) throw ValidationError("covariate_relevance_weights: need >= 2 units");
  if (p == 0) throw ValidationError("covariate_relevance_weights: no covariates");
  const std::size_t k = n - 1;
  Matrix gram(k, k);
  Vector rhs(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < p; ++c)
        s += covariates(i + 1, c) * covariates(j + 1, c);
      gram(i, j) = s;
      gram(j, i) = s;
    }
    double b = 0.0;
    for (std::size_t c = 0; c < p; ++c) b += covariates(i + 1, c) * covariates(0, c);
    rhs[i] = b;
  }
  Vector beta;
  try {
    beta = cholesky_solve(gram, rhs);
  } catch (const NumericalError&) {
    beta = cholesky_solve(gram, rhs, 1e-8);  // documented ridge fallback
  }
  const double floor = 1e-3;
  Vector out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = std::max(std::abs(beta[i]), floor);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints and manifest

void save_ncsc_model(const NCSCModel& model, const std::string& path) {
  model.validate();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    write_checkpoint_header(out);
    out << "ncsc " << model.latent_dim << ' ' << model.n_controls << ' ' << model.d
        << '\n';
    write_mlp(out, "g_eta", model.g_eta);
    write_mlp(out, "f_theta", model.f_theta);
    write_mlp(out, "h_nu", model.h_nu);
    write_vector(out, "w_diag", model.w_diag);
    write_vector(out, "norm_shift", model.norm_shift);
    write_vector(out, "norm_scale", model.norm_scale);
    write_vector(out, "time_scale", Vector{model.time_scale});
  }
  std::filesystem::rename(tmp, path);
}

NCSCModel load_ncsc_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  read_checkpoint_header(in);
  std::string tag;
  NCSCModel model;
  in >> tag >> model.latent_dim >> model.n_controls >> model.d;
  if (tag != "ncsc" || !in) throw ValidationError("checkpoint: bad ncsc header");
  model.g_eta = read_mlp(in, "g_eta");
  model.f_theta = read_mlp(in, "f_theta");
  model.h_nu = read_mlp(in, "h_nu");
  model.w_diag = read_vector(in, "w_diag");
  model.norm_shift = read_vector(in, "norm_shift");
  model.norm_scale = read_vector(in, "norm_scale");
  const Vector ts = read_vector(in, "time_scale");
  if (ts.size() != 1) throw ValidationError("checkpoint: bad time_scale");
  model.time_scale = ts[0];
  model.validate();
  return model;
}

void save_fit_manifest(const FitResult& fit, const std::string& checkpoint_path,
                       const std::string& json_path) {
  nlohmann::ordered_json j;
  j["latent_dim"] = fit.model.latent_dim;
  j["n_controls"] = fit.model.n_controls;
  j["d"] = fit.model.d;
  j["w_diag"] = fit.model.w_diag;
  j["selected_lambda"] = fit.selected_lambda;
  j["active_set"] = fit.active_set;
  j["seed"] = fit.seed;
  j["train_error"] = fit.train_error;
  j["validation_error"] = fit.validation_error;
  j["checkpoint"] = checkpoint_path;
  const std::string tmp = json_path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, json_path);
}

}  // namespace ctrlpath
