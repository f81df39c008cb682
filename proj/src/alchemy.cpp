#include "typoreg/alchemy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "typoreg/autodiff/checkpoint.hpp"
#include "typoreg/autodiff/ops.hpp"
#include "typoreg/error.hpp"
#include "typoreg/rng.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

using ad::Tensor;

namespace {

constexpr std::uint64_t kHeadStream = 0x68656164;  // "head"
constexpr std::uint64_t kProjStream = 0x70726f6a;  // "proj"
constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kDropoutStream = 0x64726f70;

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace

std::string_view to_string(Task task) {
  return task == Task::Classification ? "classification" : "relatedness";
}

Task parse_task(std::string_view text) {
  if (text == "classification") return Task::Classification;
  if (text == "relatedness") return Task::Relatedness;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected classification or relatedness)");
}

std::string_view to_string(ScalingMode mode) {
  switch (mode) {
    case ScalingMode::Constant: return "constant";
    case ScalingMode::Balanced: return "balanced";
    case ScalingMode::Learned: return "learned";
  }
  return "?";
}

ScalingMode parse_scaling_mode(std::string_view text) {
  if (text == "constant") return ScalingMode::Constant;
  if (text == "balanced") return ScalingMode::Balanced;
  if (text == "learned") return ScalingMode::Learned;
  throw ConfigError("unknown scaling mode '" + std::string(text) + "' (expected constant, balanced or learned)");
}

TokenBatch make_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> rows) {
  std::vector<std::vector<std::int32_t>> seqs;
  seqs.reserve(rows.size());
  for (std::size_t r : rows) seqs.push_back(examples[r].ids);
  TokenBatch batch = make_batch(std::span<const std::vector<std::int32_t>>(seqs));
  for (std::size_t r : rows) {
    batch.langs.push_back(examples[r].lang);
    batch.labels.push_back(examples[r].label);
    batch.targets.push_back(examples[r].target);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Model

AlchemyModel::AlchemyModel(const ModelConfig& config) : config_(config), encoder_(config.encoder) {
  const std::size_t d = config_.encoder.d_model;
  const std::size_t out = config_.task == Task::Classification ? config_.n_classes : 1;
  if (config_.task == Task::Classification && config_.n_classes < 2) {
    throw ConfigError("classification needs at least 2 classes");
  }
  std::mt19937_64 head_rng(derive_seed(config_.encoder.seed, {kHeadStream}));
  head_w_ = init_uniform({d, out}, d, head_rng);
  head_b_ = init_uniform({out}, d, head_rng);
  if (config_.d_uriel > 0) {
    std::mt19937_64 proj_rng(derive_seed(config_.encoder.seed, {kProjStream}));
    proj_w_ = init_uniform({d, config_.d_uriel}, d, proj_rng);
    proj_b_ = init_uniform({config_.d_uriel}, d, proj_rng);
    for (double& w : proj_w_.mutable_data()) w *= config_.projection_weight_scale;
    if (!config_.projection_bias.empty()) {
      if (config_.projection_bias.size() != config_.d_uriel) {
        throw ConfigError("projection bias has " + std::to_string(config_.projection_bias.size()) +
                          " values, expected " + std::to_string(config_.d_uriel));
      }
      std::copy(config_.projection_bias.begin(), config_.projection_bias.end(), proj_b_.mutable_data().begin());
    }
  }
}

Tensor AlchemyModel::pooled(const TokenBatch& batch, bool training, std::mt19937_64* rng) const {
  return pool_cls(encoder_.forward(batch, training, rng));
}

Tensor AlchemyModel::head(const Tensor& pooled) const { return ad::linear(pooled, head_w_, head_b_); }

Tensor AlchemyModel::project_to_uriel(const Tensor& pooled) const {
  if (!has_projection()) throw StateError("model was built without a linguistic-vector projection");
  if (pooled.rank() != 2 || pooled.dim(1) != config_.encoder.d_model) {
    throw ShapeError("project_to_uriel: expected [B x " + std::to_string(config_.encoder.d_model) + "], got " +
                     ad::shape_str(pooled.shape()));
  }
  return ad::linear(pooled, proj_w_, proj_b_);
}

std::vector<ad::NamedParam> AlchemyModel::task_parameters() const {
  auto params = encoder_.parameters();
  params.push_back({"head.weight", head_w_});
  params.push_back({"head.bias", head_b_});
  return params;
}

std::vector<ad::NamedParam> AlchemyModel::parameters() const {
  auto params = task_parameters();
  if (has_projection()) {
    params.push_back({"projection.weight", proj_w_});
    params.push_back({"projection.bias", proj_b_});
  }
  return params;
}

// ---------------------------------------------------------------------------
// Scaling

ScalingState ScalingState::constant(double factor) {
  ScalingState s;
  s.mode = ScalingMode::Constant;
  s.factor = factor;
  s.validate();
  return s;
}

ScalingState ScalingState::balanced(double beta, std::size_t period) {
  ScalingState s;
  s.mode = ScalingMode::Balanced;
  s.beta = beta;
  s.period = period;
  s.validate();
  return s;
}

ScalingState ScalingState::learned() {
  ScalingState s;
  s.mode = ScalingMode::Learned;
  s.raw_cls = Tensor::scalar(softplus_inverse(1.0), true);
  s.raw_uriel = Tensor::scalar(softplus_inverse(1.0), true);
  return s;
}

void ScalingState::validate() const {
  switch (mode) {
    case ScalingMode::Constant:
      if (!(factor >= 0.0) || !std::isfinite(factor)) throw ConfigError("scaling factor must be finite and >= 0");
      break;
    case ScalingMode::Balanced:
      if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("EMA decay must lie in (0, 1)");
      if (period < 1) throw ConfigError("rebalance period must be >= 1");
      break;
    case ScalingMode::Learned:
      if (!raw_cls.defined() || !raw_uriel.defined()) throw StateError("learned scaling has no raw weights");
      break;
  }
}

std::vector<ad::NamedParam> ScalingState::parameters() const {
  if (mode != ScalingMode::Learned) return {};
  return {{"scaling.raw_cls", raw_cls, false}, {"scaling.raw_uriel", raw_uriel, false}};
}

ScalingState balanced_scale_init(double l_cls_0, double l_uriel_0, double beta, std::size_t period) {
  if (!(l_cls_0 > 0.0) || !(l_uriel_0 > 0.0)) {
    throw ArgumentError("balanced scaling needs positive initial losses, got " + format_double(l_cls_0) + " and " +
                        format_double(l_uriel_0));
  }
  ScalingState s = ScalingState::balanced(beta, period);
  const double mean = (l_cls_0 + l_uriel_0) / 2.0;
  s.lambda_cls = mean / l_cls_0;
  s.lambda_uriel = mean / l_uriel_0;
  s.ema_cls = l_cls_0;
  s.ema_uriel = l_uriel_0;
  s.initialized = true;
  return s;
}

void balanced_scale_update(ScalingState& state, double l_cls, double l_uriel) {
  if (state.mode != ScalingMode::Balanced) throw StateError("balanced_scale_update called in " + std::string(to_string(state.mode)) + " mode");
  if (!state.initialized) throw StateError("balanced scaling used before initialization");
  state.ema_cls = state.beta * state.ema_cls + (1.0 - state.beta) * l_cls;
  state.ema_uriel = state.beta * state.ema_uriel + (1.0 - state.beta) * l_uriel;
  ++state.step;
  if (state.step % state.period == 0) {
    const double mean = (state.ema_cls + state.ema_uriel) / 2.0;
    state.lambda_cls = mean / state.ema_cls;
    state.lambda_uriel = mean / state.ema_uriel;
  }
}

namespace {

std::pair<double, double> fixed_lambdas(const ScalingState& s) {
  if (s.mode == ScalingMode::Constant) return {1.0, s.factor};
  if (s.mode == ScalingMode::Balanced) {
    if (!s.initialized) throw StateError("balanced scaling used before initialization");
    return {s.lambda_cls, s.lambda_uriel};
  }
  throw StateError("learned scaling needs the differentiable loss path");
}

}  // namespace

LossBreakdown total_loss(double l_cls, double l_uriel, const ScalingState& scaling) {
  const auto [lc, lu] = fixed_lambdas(scaling);
  LossBreakdown b;
  b.l_cls = l_cls;
  b.l_uriel = l_uriel;
  b.lambda_cls = lc;
  b.lambda_uriel = lu;
  b.total = lc * l_cls + lu * l_uriel;
  return b;
}

WeightedLoss learned_scale_loss(const Tensor& l_cls, const Tensor& l_uriel, const ScalingState& scaling) {
  if (scaling.mode != ScalingMode::Learned) {
    throw StateError("learned_scale_loss called in " + std::string(to_string(scaling.mode)) + " mode");
  }
  scaling.validate();
  Tensor lc = ad::softplus(scaling.raw_cls);
  Tensor lu = ad::softplus(scaling.raw_uriel);
  Tensor mini = ad::square(ad::sub(ad::add(lc, lu), Tensor::scalar(2.0)));
  Tensor total = ad::add(ad::add(ad::mul(lc, l_cls), ad::mul(lu, l_uriel)), mini);
  LossBreakdown b;
  b.l_cls = l_cls.item();
  b.l_uriel = l_uriel.item();
  b.lambda_cls = lc.item();
  b.lambda_uriel = lu.item();
  b.mini_loss = mini.item();
  b.total = total.item();
  return {total, b};
}

WeightedLoss combine_losses(const Tensor& l_cls, const Tensor& l_uriel, const ScalingState& scaling) {
  if (scaling.mode == ScalingMode::Learned) return learned_scale_loss(l_cls, l_uriel, scaling);
  const auto [lc, lu] = fixed_lambdas(scaling);
  Tensor total = ad::add(ad::scale(l_cls, lc), ad::scale(l_uriel, lu));
  LossBreakdown b = total_loss(l_cls.item(), l_uriel.item(), scaling);
  b.total = total.item();
  return {total, b};
}

// ---------------------------------------------------------------------------
// Losses

Tensor uriel_targets(std::span<const std::string> langs, const UrielStore& store, std::span<const FeatureSet> sets) {
  const std::size_t d = store.dim(sets);
  std::vector<double> u;
  u.reserve(langs.size() * d);
  for (const auto& lang : langs) {
    if (!store.has_language(lang)) {
      throw DataError("training example in language '" + lang + "' has no linguistic vector in the store");
    }
    const auto v = store.get_vector(lang, sets);
    u.insert(u.end(), v.values.begin(), v.values.end());
  }
  return Tensor::from(std::move(u), {langs.size(), d});
}

Tensor uriel_loss(const Tensor& projected, std::span<const std::string> langs, const UrielStore& store,
                  std::span<const FeatureSet> sets) {
  if (projected.rank() != 2 || projected.dim(0) != langs.size()) {
    throw ShapeError("uriel_loss: projected rows do not match the batch languages");
  }
  if (projected.dim(1) != store.dim(sets)) {
    throw ShapeError("uriel_loss: projection width " + std::to_string(projected.dim(1)) +
                     " does not match linguistic vector length " + std::to_string(store.dim(sets)));
  }
  return ad::mse(projected, uriel_targets(langs, store, sets));
}

Tensor task_loss(const AlchemyModel& model, const Tensor& head_out, const TokenBatch& batch) {
  if (model.config().task == Task::Classification) return ad::softmax_cross_entropy(head_out, batch.labels);
  return ad::mse(head_out, Tensor::from(batch.targets, {batch.batch, 1}));
}

// ---------------------------------------------------------------------------
// Training

LossBreakdown train_step(AlchemyModel& model, const TokenBatch& batch, TrainContext& ctx) {
  if (batch.batch == 0) throw ArgumentError("train_step: empty batch");
  if (!ctx.optimizer) throw StateError("train_step: no optimizer");
  Tensor pooled = model.pooled(batch, true, ctx.dropout_rng);
  Tensor l_task = task_loss(model, model.head(pooled), batch);

  LossBreakdown out;
  if (!ctx.store) {
    l_task.backward();
    out.l_cls = out.total = l_task.item();
  } else {
    if (!ctx.scaling) throw StateError("train_step: regularized training needs a scaling state");
    ScalingState& scaling = *ctx.scaling;
    Tensor l_uriel = uriel_loss(model.project_to_uriel(pooled), batch.langs, *ctx.store, ctx.sets);
    if (scaling.mode == ScalingMode::Balanced && !scaling.initialized) {
      scaling = balanced_scale_init(l_task.item(), l_uriel.item(), scaling.beta, scaling.period);
    }
    WeightedLoss w = combine_losses(l_task, l_uriel, scaling);
    if (!std::isfinite(w.breakdown.total)) throw NumericError("training loss became non-finite");
    w.total.backward();
    out = w.breakdown;
    if (scaling.mode == ScalingMode::Balanced) balanced_scale_update(scaling, out.l_cls, out.l_uriel);
  }
  if (!std::isfinite(out.total)) throw NumericError("training loss became non-finite");
  ctx.optimizer->step();
  ctx.optimizer->zero_grad();
  return out;
}

TrainResult train_loop(AlchemyModel& model, std::span<const EncodedExample> data, const UrielStore* store,
                       std::span<const FeatureSet> sets, ScalingState& scaling, const TrainOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (store && !model.has_projection()) throw StateError("regularized training needs a projection head");
  if (store) {
    for (const auto& ex : data) {
      if (!store->has_language(ex.lang)) {
        throw DataError("training corpus language '" + ex.lang + "' is missing from the linguistic store");
      }
    }
  }

  std::vector<ad::NamedParam> params = store ? model.parameters() : model.task_parameters();
  if (store) {
    for (auto& p : scaling.parameters()) params.push_back(p);
  }
  ad::AdamWConfig opt_cfg;
  opt_cfg.lr = options.lr;
  opt_cfg.weight_decay = options.weight_decay;
  ad::AdamW opt(params, opt_cfg);

  std::mt19937_64 dropout_rng(derive_seed(options.seed, {kDropoutStream}));
  TrainContext ctx;
  ctx.store = store;
  ctx.sets.assign(sets.begin(), sets.end());
  ctx.scaling = &scaling;
  ctx.optimizer = &opt;
  ctx.dropout_rng = &dropout_rng;

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= options.epochs && !data.empty(); ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(options.seed, {kShuffleStream, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    TraceRow row;
    row.epoch = epoch;
    row.loss.lambda_cls = 0.0;
    double mini_sum = 0.0;
    bool has_mini = false;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const TokenBatch batch = make_batch(data, std::span<const std::size_t>(order).subspan(start, end - start));
      const LossBreakdown b = train_step(model, batch, ctx);
      row.loss.l_cls += b.l_cls;
      row.loss.l_uriel += b.l_uriel;
      row.loss.lambda_cls += b.lambda_cls;
      row.loss.lambda_uriel += b.lambda_uriel;
      row.loss.total += b.total;
      if (b.mini_loss) {
        has_mini = true;
        mini_sum += *b.mini_loss;
      }
      ++n_batches;
      ++result.steps;
    }
    const double n = static_cast<double>(n_batches);
    row.loss.l_cls /= n;
    row.loss.l_uriel /= n;
    row.loss.lambda_cls /= n;
    row.loss.lambda_uriel /= n;
    row.loss.total /= n;
    if (has_mini) row.loss.mini_loss = mini_sum / n;
    row.step = result.steps;
    result.trace.push_back(row);
    if (options.on_epoch_end && !options.on_epoch_end(row)) break;
  }

  if (options.trace_csv) write_trace_csv(*options.trace_csv, result.trace);
  if (options.checkpoint) ad::save_params(*options.checkpoint, model.parameters());
  return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write loss trace " + path.string());
  out << "epoch,step,l_cls,l_uriel,lambda_cls,lambda_uriel,mini_loss,total\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << r.step << ',' << format_double(r.loss.l_cls) << ',' << format_double(r.loss.l_uriel)
        << ',' << format_double(r.loss.lambda_cls) << ',' << format_double(r.loss.lambda_uriel) << ','
        << (r.loss.mini_loss ? format_double(*r.loss.mini_loss) : std::string()) << ','
        << format_double(r.loss.total) << '\n';
  }
  if (!out) throw DataError("error writing loss trace " + path.string());
}

// ---------------------------------------------------------------------------
// Inference

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

template <typename F>
void for_each_batch(const AlchemyModel& model, std::span<const EncodedExample> data, std::size_t batch_size, F&& f) {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const TokenBatch batch = make_batch(data, rows);
    f(model.head(model.pooled(batch)));
  }
}

}  // namespace

std::vector<std::size_t> predict_classes(const AlchemyModel& model, std::span<const EncodedExample> data,
                                         std::size_t batch_size) {
  if (model.config().task != Task::Classification) throw StateError("predict_classes on a relatedness model");
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for_each_batch(model, data, batch_size, [&](const Tensor& logits) {
    const std::size_t c = logits.dim(1);
    const auto v = logits.data();
    for (std::size_t b = 0; b < logits.dim(0); ++b) out.push_back(argmax(v.subspan(b * c, c)));
  });
  return out;
}

std::vector<double> predict_scores(const AlchemyModel& model, std::span<const EncodedExample> data,
                                   std::size_t batch_size) {
  if (model.config().task != Task::Relatedness) throw StateError("predict_scores on a classification model");
  std::vector<double> out;
  out.reserve(data.size());
  for_each_batch(model, data, batch_size, [&](const Tensor& scores) {
    const auto v = scores.data();
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

}  // namespace typoreg
