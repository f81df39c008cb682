#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "typoreg/autodiff/adamw.hpp"
#include "typoreg/autodiff/tensor.hpp"
#include "typoreg/encoder.hpp"
#include "typoreg/uriel_store.hpp"

namespace typoreg {

enum class Task { Classification, Relatedness };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);

/// One tokenized example. `label` is used for classification, `target` for
/// relatedness.
struct EncodedExample {
  std::string lang;
  std::vector<std::int32_t> ids;  // CLS-prefixed
  std::size_t label = 0;
  double target = 0.0;
};

TokenBatch make_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> rows);

struct ModelConfig {
  EncoderConfig encoder;
  Task task = Task::Classification;
  std::size_t n_classes = 2;
  /// Width of the linguistic-vector projection; 0 builds no projection.
  std::size_t d_uriel = 0;
  /// Initial projection bias; empty keeps the uniform init.
  std::vector<double> projection_bias;
  /// Multiplier applied to the initial projection weights.
  double projection_weight_scale = 1.0;
};

/// Encoder, task head and linguistic-vector projection.
class AlchemyModel {
 public:
  explicit AlchemyModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  bool has_projection() const noexcept { return proj_w_.defined(); }
  std::size_t d_uriel() const noexcept { return config_.d_uriel; }

  /// CLS-pooled sentence representation [B x d_model].
  ad::Tensor pooled(const TokenBatch& batch, bool training = false, std::mt19937_64* rng = nullptr) const;
  /// Logits [B x C] or scores [B x 1].
  ad::Tensor head(const ad::Tensor& pooled) const;
  /// Z = pooled . W + b, [B x d_uriel].
  ad::Tensor project_to_uriel(const ad::Tensor& pooled) const;

  /// Encoder and head parameters.
  std::vector<ad::NamedParam> task_parameters() const;
  /// Task parameters plus the projection when present.
  std::vector<ad::NamedParam> parameters() const;

  /// Direct access for tests and alignment diagnostics.
  ad::Tensor projection_weight() const { return proj_w_; }
  ad::Tensor projection_bias() const { return proj_b_; }

 private:
  ModelConfig config_;
  Encoder encoder_;
  ad::Tensor head_w_, head_b_;
  ad::Tensor proj_w_, proj_b_;
};

struct LossBreakdown {
  double l_cls = 0.0;
  double l_uriel = 0.0;
  double lambda_cls = 1.0;
  double lambda_uriel = 0.0;
  std::optional<double> mini_loss;
  double total = 0.0;
};

/// How the two loss weights are chosen.
///  - Constant: lambda_cls = 1, lambda_uriel = factor.
///  - Balanced: weights start at mean(l0)/l0_i and are rebalanced every
///    `period` steps from exponential moving averages of the losses.
///  - Learned: lambda_i = softplus(raw_i) are trained, with a penalty on the
///    deviation of their sum from 2.
enum class ScalingMode { Constant, Balanced, Learned };

std::string_view to_string(ScalingMode mode);
ScalingMode parse_scaling_mode(std::string_view text);

struct ScalingState {
  ScalingMode mode = ScalingMode::Constant;
  double factor = 10.0;

  // Balanced
  double beta = 0.9;
  std::size_t period = 100;
  bool initialized = false;
  double ema_cls = 0.0;
  double ema_uriel = 0.0;
  double lambda_cls = 1.0;
  double lambda_uriel = 0.0;
  std::size_t step = 0;

  // Learned
  ad::Tensor raw_cls;
  ad::Tensor raw_uriel;

  static ScalingState constant(double factor);
  static ScalingState balanced(double beta = 0.9, std::size_t period = 100);
  static ScalingState learned();

  void validate() const;
  /// Trainable raw scalars (learned mode only), excluded from weight decay.
  std::vector<ad::NamedParam> parameters() const;
};

/// Balanced-mode state seeded from the first observed losses.
ScalingState balanced_scale_init(double l_cls_0, double l_uriel_0, double beta = 0.9, std::size_t period = 100);
/// One EMA step; weights are recomputed every `period` steps.
void balanced_scale_update(ScalingState& state, double l_cls, double l_uriel);

/// Weighted sum for constant and balanced modes from plain loss values.
LossBreakdown total_loss(double l_cls, double l_uriel, const ScalingState& scaling);

struct WeightedLoss {
  ad::Tensor total;
  LossBreakdown breakdown;
};

/// Learned-mode objective: softplus weights plus ((lambda_cls + lambda_uriel) - 2)^2.
WeightedLoss learned_scale_loss(const ad::Tensor& l_cls, const ad::Tensor& l_uriel, const ScalingState& scaling);

/// Differentiable weighted objective for any mode.
WeightedLoss combine_losses(const ad::Tensor& l_cls, const ad::Tensor& l_uriel, const ScalingState& scaling);

/// Target matrix U [B x d] with one row per example language.
ad::Tensor uriel_targets(std::span<const std::string> langs, const UrielStore& store,
                         std::span<const FeatureSet> sets);

/// (1/B) sum_i ||Z_i - U_i||^2 against each example's language vector.
ad::Tensor uriel_loss(const ad::Tensor& projected, std::span<const std::string> langs, const UrielStore& store,
                      std::span<const FeatureSet> sets);

/// Task loss: cross entropy over classes, or squared error of the score.
ad::Tensor task_loss(const AlchemyModel& model, const ad::Tensor& head_out, const TokenBatch& batch);

/// Everything a training step needs besides the model and the batch.
struct TrainContext {
  const UrielStore* store = nullptr;  // null trains without the regularizer
  std::vector<FeatureSet> sets;
  ScalingState* scaling = nullptr;
  ad::AdamW* optimizer = nullptr;
  std::mt19937_64* dropout_rng = nullptr;
};

/// Forward, weighted loss, backward, optimizer update, zeroed grads.
LossBreakdown train_step(AlchemyModel& model, const TokenBatch& batch, TrainContext& ctx);

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed at the end of the epoch
  LossBreakdown loss;    // epoch averages
};

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> trace_csv;
  std::optional<std::filesystem::path> checkpoint;
  /// Called after every epoch; returning false stops training.
  std::function<bool(const TraceRow&)> on_epoch_end;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::size_t steps = 0;
};

/// Minibatch training with a fixed shuffle per (seed, epoch). Passing a null
/// store trains the task head alone.
TrainResult train_loop(AlchemyModel& model, std::span<const EncodedExample> data, const UrielStore* store,
                       std::span<const FeatureSet> sets, ScalingState& scaling, const TrainOptions& options);

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace);

/// Class predictions (lowest index wins ties) or relatedness scores. Uses the
/// encoder and task head only.
std::vector<std::size_t> predict_classes(const AlchemyModel& model, std::span<const EncodedExample> data,
                                         std::size_t batch_size = 64);
std::vector<double> predict_scores(const AlchemyModel& model, std::span<const EncodedExample> data,
                                   std::size_t batch_size = 64);

std::size_t argmax(std::span<const double> values);

}  // namespace typoreg
