#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctrlpath/nn.hpp"
#include "ctrlpath/panel.hpp"

namespace ctrlpath {

// Neural continuous synthetic control: a latent state driven by the spline
// reconstructions of the control units. The embedding g maps the treated
// unit's first observation into the latent space, the vector field f maps the
// latent state to one column per driving channel, and the readout h maps the
// latent state back to observation space. w_diag holds one trainable weight
// per control unit; a weight of exactly zero severs that control's influence.
struct NCSCModel {
  MLP g_eta;      // d -> l
  MLP f_theta;    // l -> l * driving_channels(), row-major
  MLP h_nu;       // l -> d
  Vector w_diag;  // n_controls
  std::size_t latent_dim = 5;
  std::size_t n_controls = 0;
  std::size_t d = 1;

  // Internal normalization. Values are shifted/scaled per dimension before
  // they reach the networks; predictions are mapped back; the time channel
  // advances at 1/time_scale. Identity by default.
  Vector norm_shift;  // size d
  Vector norm_scale;  // size d, positive
  double time_scale = 1.0;

  // Per-unit value channels for every control plus one shared time channel.
  std::size_t driving_channels() const { return n_controls * d + 1; }

  std::size_t param_count() const;
  // Flat packing [g | f | h | w_diag]; group offsets for slicing.
  std::size_t g_offset() const { return 0; }
  std::size_t f_offset() const { return g_eta.param_count(); }
  std::size_t h_offset() const { return f_offset() + f_theta.param_count(); }
  std::size_t w_offset() const { return h_offset() + h_nu.param_count(); }
  void pack(double* out) const;
  void unpack(const double* in);

  std::vector<std::size_t> active_set(double eps = 1e-6) const;
  void validate() const;
};

struct TrainConfig {
  double lambda_l1 = 0.0;                      // penalty for loss()
  Vector lambda_grid{0.001, 0.01, 0.1, 1.0};   // swept by fit(); empty: use lambda_l1
  double lr = 0.01;
  std::size_t epochs = 2000;
  std::size_t patience = 50;
  double solver_step = 0.0;                    // <= 0: min adjacent observation gap
  double validation_fraction = 0.2;            // held-out tail of pre-treatment points
  Vector relevance_weights;                    // optional, per control, positive
  std::size_t latent_dim = 5;
  std::vector<std::size_t> f_hidden{10, 10};
  std::vector<std::size_t> g_hidden{10};
  std::vector<std::size_t> h_hidden{10};
  std::size_t max_lr_halvings = 6;
  // Relative validation improvement required before new parameters replace
  // the incumbent best (0 accepts any improvement).
  double improvement_rtol = 0.0;
  bool normalize = true;
  // Start w_diag at the discrete SC solution instead of uniform weights.
  bool warm_start_sc = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitResult {
  NCSCModel model;
  Vector loss_history;  // objective per epoch at the selected lambda
  double selected_lambda = 0.0;
  std::vector<std::size_t> active_set;
  double train_error = 0.0;
  double validation_error = 0.0;
  std::uint64_t seed = 0;
};

struct LatentTrajectory {
  Vector times;
  Matrix z;  // times.size() x latent_dim
};

struct TreatmentEffectSeries {
  Vector times;  // all > treatment time, ascending
  Matrix tau;    // times.size() x d
};

struct LossGrads {
  Vector g_eta, f_theta, h_nu, w_diag;
  double loss_value = 0.0;
};

// Fresh model with seeded initialization. The vector field's output layer
// starts at zero so the initial latent path is constant; see fit().
NCSCModel make_ncsc_model(std::size_t d, std::size_t n_controls,
                          const TrainConfig& config, std::uint64_t seed);

// dz/dt at (z, t): the field output matrix applied to the w-scaled stacked
// spline derivatives, with the shared time channel unscaled.
Vector cde_rhs(const NCSCModel& model, std::span<const double> z, double t,
               const std::vector<SplinePath>& control_splines);

// Fixed-step RK4 (3/8 rule) from t_eval.front() with z0 = g(y1_t0).
// Evaluation points are merged into the step grid, so every reported state is
// an exact solver state.
LatentTrajectory solve_forward(const NCSCModel& model,
                               const std::vector<SplinePath>& control_splines,
                               std::span<const double> y1_t0,
                               const Vector& t_eval, double solver_step);

// Counterfactual trajectory h(z_t) at the requested times, original scale.
Matrix predict(const NCSCModel& model, const Panel& panel, const Vector& times,
               double solver_step = 0.0);

// Mean squared error over pre-treatment treated observations plus the
// (optionally relevance-weighted) L1 penalty on w_diag.
double loss(const NCSCModel& model, const Panel& panel, const TrainConfig& config);

// Exact reverse-mode gradients of the squared-error part of the loss through
// every solver stage. The L1 term is handled by the proximal step and is not
// included here.
LossGrads loss_gradients(const NCSCModel& model, const Panel& panel,
                         const TrainConfig& config);

FitResult fit(const Panel& panel, const TrainConfig& config);

// tau(t) = observed treated value - predicted counterfactual, for t > T.
TreatmentEffectSeries treatment_effect(const FitResult& fit, const Panel& panel,
                                       const Vector& times);

// Least-squares projection of the treated unit's covariates onto the control
// units' covariates, mapped to positive penalty weights. covariates is n x p
// with row 0 the treated unit.
Vector covariate_relevance_weights(const Matrix& covariates);

void save_ncsc_model(const NCSCModel& model, const std::string& path);
NCSCModel load_ncsc_model(const std::string& path);
// Sidecar JSON manifest next to a checkpoint.
void save_fit_manifest(const FitResult& fit, const std::string& checkpoint_path,
                       const std::string& json_path);

}  // namespace ctrlpath
