#pragma once

// Optimization: batch objective with gradients, AdamW, learning-rate
// schedule, checkpoints, context extension and the gradient-check harness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sf/dataloader.hpp"
#include "sf/objectives.hpp"

namespace sf {

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  Index steps = 2000;
  Index batch_size = 16;
  double peak_lr = 1e-3;
  double warmup_frac = 0.03;
  double min_lr_frac = 0.1;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double alpha = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::vector<double> mixture_weights{1.0, 1.0};
  Index max_patches = 0;  // > 0 raises the model's context bound before training
  double flip_prob = 0.5;
  double resample_prob = 0.3;
  Index workers = 1;
  Index checkpoint_every = 0;
  Index log_every = 50;

  void validate() const;
  std::string to_text() const;
  void set(std::string_view key, std::string_view value);
  static TrainConfig from_text(std::string_view text);
};

/// Learning rate at 0-based `step`: linear warmup over warmup_frac * steps,
/// then cosine decay to min_lr_frac * peak at the last step.
double learning_rate(const TrainConfig& config, Index step);

/// Normalizes a raw training window of (N + H + 1) * P points with the
/// statistics of its first N * P points and cuts it into patches.
template <class S>
Patches<S> prepare_window(std::span<const double> window, Index n_ctx, Index patch_len);

struct BatchLoss {
  double total = 0.0;  // mean over samples of NTP + STP, plus alpha * aux
  double ntp = 0.0;
  double stp = 0.0;
  double aux = 0.0;
  std::vector<double> per_depth;  // mean per-token pred_loss at each depth
};

/// Forward at depth weights.size() over every window (rows [0, n_ctx) are
/// the context), stage loss, and optionally the gradient. Per-sample
/// gradients are reduced in sample order so the result does not depend on
/// `workers`.
template <class S>
BatchLoss batch_objective(const ModelParams<S>& params, const std::vector<Patches<S>>& windows, Index n_ctx,
                          const std::vector<double>& weights, double alpha, ModelParams<S>* grads = nullptr,
                          Index workers = 1);

template <class S>
double global_norm(const ModelParams<S>& grads);

/// Scales grads so their global norm is at most max_norm; returns the norm
/// before clipping.
template <class S>
double clip_global_norm(ModelParams<S>& grads, double max_norm);

template <class S>
struct OptimizerState {
  Index step = 0;  // completed updates
  ModelParams<S> m, v;

  static OptimizerState zeros(const ModelConfig& config);
};

/// One decoupled-weight-decay Adam update with learning rate `lr`.
template <class S>
void adamw_update(ModelParams<S>& params, const ModelParams<S>& grads, OptimizerState<S>& state,
                  const TrainConfig& config, double lr);

struct StepReport {
  Index step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
  BatchLoss loss;
};

/// Full training step. A non-finite loss or gradient leaves params and
/// optimizer state untouched and sets `skipped`.
template <class S>
StepReport train_step(ModelParams<S>& params, OptimizerState<S>& state, const std::vector<Patches<S>>& windows,
                      const TrainConfig& config);

/// Raises the context bound. Parameter shapes do not change.
template <class S>
ModelParams<S> extend_context(const ModelParams<S>& params, Index new_max_patches);

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
struct Checkpoint {
  ModelParams<S> params;
  std::optional<OptimizerState<S>> optimizer;
  std::string train_config;  // TrainConfig::to_text of the producing run
  std::uint32_t stored_dtype = sizeof(S);
};

template <class S>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<S>& params,
                     const OptimizerState<S>* optimizer = nullptr, const std::string& train_config = {});

/// Loads a checkpoint, converting the stored precision to S when needed.
/// With `expected`, the stored config must match it except for max_patches
/// and rope_scale; the first mismatch is named in the error.
template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

// ---------------------------------------------------------------------------
// Training loop.

/// Draws one raw training window of (N + H + 1) * P points for `step`:
/// source chosen by the mixture, optional Fourier resampling of a longer or
/// shorter span back to the window length, optional value flip.
Series draw_training_window(MixtureSampler& data, const ModelConfig& model, const TrainConfig& config, Index step,
                            std::mt19937_64& rng);

/// Batch of prepared windows for `step`; depends only on (config.seed, step)
/// and the data.
template <class S>
std::vector<Patches<S>> training_batch(MixtureSampler& data, const ModelConfig& model, const TrainConfig& config,
                                       Index step);

template <class S>
struct TrainRun {
  ModelParams<S> params;
  OptimizerState<S> state;
  std::vector<StepReport> history;
  Index skipped = 0;
};

struct TrainHooks {
  std::function<void(const StepReport&)> on_step;
  /// Called after every checkpoint_every steps with the completed step count.
  std::function<void(Index)> on_interval;
  std::filesystem::path checkpoint_dir;  // when set, interval checkpoints are written here
};

/// Runs steps state.step .. config.steps - 1. Resuming from a saved state
/// reproduces the uninterrupted trajectory.
template <class S>
TrainRun<S> train_loop(ModelParams<S> params, OptimizerState<S> state, MixtureSampler& data,
                       const TrainConfig& config, const TrainHooks& hooks = {});

/// Pre-training from freshly initialized parameters (seeded by config.seed),
/// uniform serial weights.
template <class S>
TrainRun<S> run_pretrain(const ModelConfig& model, const TrainConfig& config, MixtureSampler& data,
                         const TrainHooks& hooks = {});

/// Continued training of a pre-trained model with 1/sqrt(j) serial weights.
/// The context bound is raised first when config.max_patches exceeds it.
/// Optimizer state and schedule start fresh.
template <class S>
TrainRun<S> run_posttrain(const ModelParams<S>& pretrained, const TrainConfig& config, MixtureSampler& data,
                          const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Gradient check.

struct GradCheckOptions {
  std::uint64_t seed = 7;
  Index batch = 2;
  double epsilon = 1e-5;
  double alpha = 0.01;
  Stage stage = Stage::Pretrain;
  GradCheckTolerance tolerance{1e-4, 1e-10};
  /// Applied to the analytic gradient before comparison (harness tests).
  std::function<void(ModelParams<double>&)> corrupt;
};

/// Analytic versus central-difference gradient of the full stage loss on a
/// seeded batch, one report per parameter family.
std::vector<GradCheckReport> gradient_check_suite(const ModelConfig& config, const GradCheckOptions& options = {});

} // namespace sf
