#include "ctrlpath/nn.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>

#include "ctrlpath/errors.hpp"

namespace ctrlpath {

MLP MLP::make(std::vector<std::size_t> dims) {
  if (dims.size() < 2) throw ValidationError("MLP: need input and output dims");
  for (auto d : dims)
    if (d == 0) throw ValidationError("MLP: zero layer width");
  MLP net;
  net.layer_dims = std::move(dims);
  for (std::size_t k = 0; k + 1 < net.layer_dims.size(); ++k) {
    net.weights.emplace_back(net.layer_dims[k + 1], net.layer_dims[k], 0.0);
    net.biases.emplace_back(net.layer_dims[k + 1], 0.0);
  }
  return net;
}

std::size_t MLP::param_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k)
    n += weights[k].size() + biases[k].size();
  return n;
}

void MLP::init_glorot(Rng& rng) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double fan_in = static_cast<double>(layer_dims[k]);
    const double fan_out = static_cast<double>(layer_dims[k + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < weights[k].size(); ++i)
      weights[k].data()[i] = rng.uniform(-bound, bound);
    std::fill(biases[k].begin(), biases[k].end(), 0.0);
  }
}

void MLP::pack(double* out) const {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out = std::copy(weights[k].data(), weights[k].data() + weights[k].size(), out);
    out = std::copy(biases[k].begin(), biases[k].end(), out);
  }
}

void MLP::unpack(const double* in) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    std::copy(in, in + weights[k].size(), weights[k].data());
    in += weights[k].size();
    std::copy(in, in + biases[k].size(), biases[k].begin());
    in += biases[k].size();
  }
}

const Vector& mlp_forward_ws(const MLP& net, std::span<const double> x,
                             MLPWorkspace& ws) {
  if (x.size() != net.input_dim()) throw ValidationError("mlp_forward: bad input size");
  const std::size_t L = net.n_layers();
  ws.acts.resize(L + 1);
  ws.preacts.resize(L);
  ws.acts[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < L; ++k) {
    const Matrix& w = net.weights[k];
    const Vector& in = ws.acts[k];
    Vector& pre = ws.preacts[k];
    pre.resize(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i)
      pre[i] = net.biases[k][i] + dot(w.row(i), in.data(), w.cols());
    Vector& out = ws.acts[k + 1];
    out.resize(pre.size());
    if (k + 1 == L)
      std::copy(pre.begin(), pre.end(), out.begin());
    else
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = elu(pre[i]);
  }
  return ws.acts[L];
}

Vector mlp_forward(const MLP& net, std::span<const double> x) {
  MLPWorkspace ws;
  return mlp_forward_ws(net, x, ws);
}

void mlp_vjp_accum(const MLP& net, std::span<const double> x,
                   std::span<const double> cotangent, MLPWorkspace& ws,
                   double* grad_flat, double* d_input) {
  mlp_forward_ws(net, x, ws);
  mlp_backward_ws(net, ws, cotangent, grad_flat, d_input);
}

void mlp_backward_ws(const MLP& net, MLPWorkspace& ws,
                     std::span<const double> cotangent, double* grad_flat,
                     double* d_input) {
  if (cotangent.size() != net.output_dim())
    throw ValidationError("mlp_vjp: bad cotangent size");
  const std::size_t L = net.n_layers();

  // Per-layer offsets into the flat gradient.
  std::vector<std::size_t> offsets(L);
  std::size_t off = 0;
  for (std::size_t k = 0; k < L; ++k) {
    offsets[k] = off;
    off += net.weights[k].size() + net.biases[k].size();
  }

  ws.delta.assign(cotangent.begin(), cotangent.end());
  for (std::size_t k = L; k-- > 0;) {
    const Matrix& w = net.weights[k];
    if (k + 1 != L)
      for (std::size_t i = 0; i < ws.delta.size(); ++i)
        ws.delta[i] *= elu_grad(ws.preacts[k][i]);
    double* gw = grad_flat + offsets[k];
    double* gb = gw + w.size();
    const Vector& in = ws.acts[k];
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double di = ws.delta[i];
      double* gwrow = gw + i * w.cols();
      for (std::size_t j = 0; j < w.cols(); ++j) gwrow[j] += di * in[j];
      gb[i] += di;
    }
    if (k == 0) {
      if (d_input)
        for (std::size_t j = 0; j < w.cols(); ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < w.rows(); ++i) s += w(i, j) * ws.delta[i];
          d_input[j] += s;
        }
    } else {
      ws.delta_tmp.assign(w.cols(), 0.0);
      for (std::size_t i = 0; i < w.rows(); ++i) {
        const double di = ws.delta[i];
        const double* wrow = w.row(i);
        for (std::size_t j = 0; j < w.cols(); ++j) ws.delta_tmp[j] += wrow[j] * di;
      }
      ws.delta.swap(ws.delta_tmp);
    }
  }
}

MLPGrads mlp_vjp(const MLP& net, std::span<const double> x,
                 std::span<const double> cotangent) {
  Vector flat(net.param_count(), 0.0);
  MLPGrads out;
  out.d_input.assign(net.input_dim(), 0.0);
  MLPWorkspace ws;
  mlp_vjp_accum(net, x, cotangent, ws, flat.data(), out.d_input.data());
  const double* p = flat.data();
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    Matrix dw(net.weights[k].rows(), net.weights[k].cols());
    std::copy(p, p + dw.size(), dw.data());
    p += dw.size();
    Vector db(p, p + net.biases[k].size());
    p += db.size();
    out.d_weights.push_back(std::move(dw));
    out.d_biases.push_back(std::move(db));
  }
  return out;
}

void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size())
    throw ValidationError("adam_step: shape mismatch");
  if (!all_finite(grads.data(), grads.size()))
    throw NumericalError("adam_step: non-finite gradient (divergence)");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void prox_l1_inplace(std::span<double> values, double threshold) {
  if (!(threshold >= 0.0)) throw ValidationError("prox_l1: threshold must be >= 0");
  for (auto& v : values) {
    const double mag = std::abs(v) - threshold;
    v = mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
  }
}

void prox_l1_inplace(std::span<double> values, std::span<const double> thresholds) {
  if (values.size() != thresholds.size())
    throw ValidationError("prox_l1: threshold size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(thresholds[i] >= 0.0))
      throw ValidationError("prox_l1: threshold must be >= 0");
    const double mag = std::abs(values[i]) - thresholds[i];
    values[i] = mag > 0.0 ? (values[i] > 0.0 ? mag : -mag) : 0.0;
  }
}

Vector prox_l1(const Vector& values, double threshold) {
  Vector out = values;
  prox_l1_inplace(std::span<double>(out), threshold);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format

namespace {
constexpr const char* kMagic = "ctrlpath-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& out, const double* v, std::size_t n) {
  char buf[40];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    out << buf << ((i + 1) % 8 == 0 || i + 1 == n ? '\n' : ' ');
  }
}
}  // namespace

void write_checkpoint_header(std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
}

void read_checkpoint_header(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kMagic || version != kVersion)
    throw ValidationError("checkpoint: bad magic or version");
}

void write_mlp(std::ostream& out, const std::string& name, const MLP& net) {
  out << "mlp " << name << ' ' << net.layer_dims.size();
  for (auto d : net.layer_dims) out << ' ' << d;
  out << '\n';
  Vector flat(net.param_count());
  net.pack(flat.data());
  write_values(out, flat.data(), flat.size());
}

MLP read_mlp(std::istream& in, const std::string& expected_name) {
  std::string tag, name;
  std::size_t n_dims = 0;
  in >> tag >> name >> n_dims;
  if (tag != "mlp" || name != expected_name || n_dims < 2 || n_dims > 64)
    throw ValidationError("checkpoint: expected mlp section '" + expected_name + "'");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) in >> d;
  if (!in) throw ValidationError("checkpoint: truncated mlp header");
  MLP net = MLP::make(std::move(dims));
  Vector flat(net.param_count());
  for (auto& v : flat) in >> v;
  if (!in) throw ValidationError("checkpoint: truncated mlp parameters");
  net.unpack(flat.data());
  return net;
}

void write_vector(std::ostream& out, const std::string& name, const Vector& v) {
  out << "vec " << name << ' ' << v.size() << '\n';
  write_values(out, v.data(), v.size());
}

Vector read_vector(std::istream& in, const std::string& expected_name) {
  std::string tag, name;
  std::size_t n = 0;
  in >> tag >> name >> n;
  if (tag != "vec" || name != expected_name)
    throw ValidationError("checkpoint: expected vec section '" + expected_name + "'");
  Vector v(n);
  for (auto& x : v) in >> x;
  if (!in) throw ValidationError("checkpoint: truncated vector");
  return v;
}

}  // namespace ctrlpath
