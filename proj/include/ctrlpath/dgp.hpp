#pragma once

#include <cstdint>
#include <vector>

#include "ctrlpath/panel.hpp"

namespace ctrlpath {

// Lorenz-96 experiment: the forcing constant F acts as the treatment. The
// treated unit runs at f_control before t_treat and f_treated after; controls
// are independently initialized systems held at f_control. Only the first
// state dimension of each system is observed.
struct LorenzConfig {
  std::size_t d = 10;
  double f_control = 5.0;
  double f_treated = 10.0;
  std::size_t n_controls = 20;
  double t_treat = 200.0;
  double horizon = 400.0;
  double sample_spacing = 1.0;
  double rk_step = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SimulatedPanel {
  Panel panel;
  UnitSeries truth;  // counterfactual path of the treated unit
};

// Cyclic Lorenz-96 right-hand side with forcing F.
std::vector<double> lorenz_rhs(const std::vector<double>& state, double forcing);

SimulatedPanel simulate_lorenz(const LorenzConfig& config);

// Piecewise-constant function of time: value(t) = values[i] on
// [breaks[i-1], breaks[i]), with values.size() == breaks.size() + 1.
struct PiecewiseConstant {
  std::vector<double> breaks;
  std::vector<double> values{0.0};

  double operator()(double t) const;
  static PiecewiseConstant constant(double v) { return {{}, {v}}; }
};

// Linear dynamical system dy_i/dt = alpha(t) y_i + z_i(t) with independent
// mean-zero Gaussian noise held constant over each grid interval. The treated
// unit's initial value must equal the weighted combination of the control
// initial values, which ties the noise-free components together for all time.
struct LinearDGPConfig {
  PiecewiseConstant alpha = PiecewiseConstant::constant(0.0);
  double noise_std = 0.0;
  std::size_t n_units = 5;            // treated + controls
  std::vector<double> true_weights;   // size n_units - 1
  std::vector<double> y0;             // size n_units; y0[0] == sum(w*y0[1:])
  double t_treat = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

SimulatedPanel simulate_linear(const LinearDGPConfig& config,
                               const std::vector<double>& t_grid);

}  // namespace ctrlpath
