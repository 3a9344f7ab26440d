#pragma once

#include <cstddef>
#include <vector>

namespace ctrlpath {

// Scratch buffers for the 3/8-rule Runge-Kutta step.
struct Rk4Workspace {
  std::vector<double> k1, k2, k3, k4, stage;
  void resize(std::size_t n) {
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    stage.resize(n);
  }
};

// One fourth-order Runge-Kutta step (3/8 rule), applied in place.
// Rhs signature: void(double t, const double* y, double* dydt).
template <class Rhs>
void rk4_38_step(const Rhs& rhs, double t, double h, std::vector<double>& y,
                 Rk4Workspace& ws) {
  const std::size_t n = y.size();
  ws.resize(n);
  rhs(t, y.data(), ws.k1.data());
  for (std::size_t i = 0; i < n; ++i) ws.stage[i] = y[i] + h * ws.k1[i] / 3.0;
  rhs(t + h / 3.0, ws.stage.data(), ws.k2.data());
  for (std::size_t i = 0; i < n; ++i)
    ws.stage[i] = y[i] + h * (-ws.k1[i] / 3.0 + ws.k2[i]);
  rhs(t + 2.0 * h / 3.0, ws.stage.data(), ws.k3.data());
  for (std::size_t i = 0; i < n; ++i)
    ws.stage[i] = y[i] + h * (ws.k1[i] - ws.k2[i] + ws.k3[i]);
  rhs(t + h, ws.stage.data(), ws.k4.data());
  for (std::size_t i = 0; i < n; ++i)
    y[i] += h * (ws.k1[i] + 3.0 * ws.k2[i] + 3.0 * ws.k3[i] + ws.k4[i]) / 8.0;
}

}  // namespace ctrlpath
