#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctrlpath/linalg.hpp"
#include "ctrlpath/rng.hpp"

namespace ctrlpath {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Feed-forward network with elu activations on all layers except the output
// layer, which stays affine.
struct MLP {
  std::vector<std::size_t> layer_dims;  // {in, hidden..., out}
  std::vector<Matrix> weights;          // weights[k]: dims[k+1] x dims[k]
  std::vector<Vector> biases;

  static MLP make(std::vector<std::size_t> dims);

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t n_layers() const { return weights.size(); }
  std::size_t param_count() const;

  // Uniform Glorot-style init, biases zero.
  void init_glorot(Rng& rng);

  // Flat packing order: W0 row-major, b0, W1, b1, ...
  void pack(double* out) const;
  void unpack(const double* in);
};

// Reusable forward/backward buffers.
struct MLPWorkspace {
  std::vector<Vector> acts;     // acts[0] = input, acts[k+1] = layer k output
  std::vector<Vector> preacts;  // pre-activation per layer
  Vector delta, delta_tmp;
};

// Forward pass; the result aliases workspace storage.
const Vector& mlp_forward_ws(const MLP& net, std::span<const double> x,
                             MLPWorkspace& ws);
Vector mlp_forward(const MLP& net, std::span<const double> x);

// Reverse-mode gradients of <cotangent, forward(x)>. Parameter gradients are
// accumulated into grad_flat (same packing as MLP::pack); the input gradient
// is accumulated into d_input when non-null.
void mlp_vjp_accum(const MLP& net, std::span<const double> x,
                   std::span<const double> cotangent, MLPWorkspace& ws,
                   double* grad_flat, double* d_input);

// Backward pass reusing the activations left in ws by mlp_forward_ws.
void mlp_backward_ws(const MLP& net, MLPWorkspace& ws,
                     std::span<const double> cotangent, double* grad_flat,
                     double* d_input);

struct MLPGrads {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_biases;
  Vector d_input;
};

MLPGrads mlp_vjp(const MLP& net, std::span<const double> x,
                 std::span<const double> cotangent);

// Bias-corrected Adam over a flat parameter vector.
struct AdamState {
  Vector m, v;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 0.01;

  AdamState(std::size_t n, double learning_rate)
      : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

// Throws NumericalError on non-finite gradients.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads);

// Soft-thresholding: sign(v) * max(|v| - threshold, 0).
Vector prox_l1(const Vector& values, double threshold);
void prox_l1_inplace(std::span<double> values, double threshold);
void prox_l1_inplace(std::span<double> values, std::span<const double> thresholds);

// Checkpoint stream format: a version line, then named mlp/vec sections with
// dimension headers and %.17g parameters.
void write_checkpoint_header(std::ostream& out);
void read_checkpoint_header(std::istream& in);
void write_mlp(std::ostream& out, const std::string& name, const MLP& net);
MLP read_mlp(std::istream& in, const std::string& expected_name);
void write_vector(std::ostream& out, const std::string& name, const Vector& v);
Vector read_vector(std::istream& in, const std::string& expected_name);

}  // namespace ctrlpath
