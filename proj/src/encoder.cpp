#include "typoreg/encoder.hpp"

#include <cmath>

#include "typoreg/autodiff/ops.hpp"
#include "typoreg/error.hpp"

namespace typoreg {

using ad::Tensor;

void EncoderConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("encoder: vocab_size must be at least 2 (CLS and UNK)");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("encoder: d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0) throw ConfigError("encoder: n_layers must be positive");
  if (max_seq_len < 2) throw ConfigError("encoder: max_seq_len must be at least 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
}

std::size_t TokenBatch::valid_count(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < seq_len; ++t) n += mask[b * seq_len + t] ? 1 : 0;
  return n;
}

void TokenBatch::validate() const {
  if (batch == 0 || seq_len == 0) throw ArgumentError("token batch is empty");
  if (ids.size() != batch * seq_len || mask.size() != batch * seq_len) {
    throw ShapeError("token batch: ids/mask size does not match B x T");
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (!mask[b * seq_len]) throw ArgumentError("token batch: CLS position masked in row " + std::to_string(b));
  }
}

TokenBatch make_batch(std::span<const std::vector<std::int32_t>> sequences) {
  TokenBatch batch;
  batch.batch = sequences.size();
  for (const auto& s : sequences) batch.seq_len = std::max(batch.seq_len, s.size());
  batch.ids.assign(batch.batch * batch.seq_len, 0);
  batch.mask.assign(batch.batch * batch.seq_len, 0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (std::size_t t = 0; t < sequences[b].size(); ++t) {
      batch.ids[b * batch.seq_len + t] = sequences[b][t];
      batch.mask[b * batch.seq_len + t] = 1;
    }
  }
  return batch;
}

Tensor init_uniform(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(ad::numel_of(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(v), std::move(shape), true);
}

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.d_model;
  token_emb_ = init_uniform({config_.vocab_size, d}, d, rng);
  pos_emb_ = init_uniform({config_.max_seq_len, d}, d, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_g = Tensor::full({d}, 1.0, true);
    layer.ln1_b = Tensor::zeros({d}, true);
    layer.wq = init_uniform({d, d}, d, rng);
    layer.bq = init_uniform({d}, d, rng);
    layer.wk = init_uniform({d, d}, d, rng);
    layer.bk = init_uniform({d}, d, rng);
    layer.wv = init_uniform({d, d}, d, rng);
    layer.bv = init_uniform({d}, d, rng);
    layer.wo = init_uniform({d, d}, d, rng);
    layer.bo = init_uniform({d}, d, rng);
    layer.ln2_g = Tensor::full({d}, 1.0, true);
    layer.ln2_b = Tensor::zeros({d}, true);
    layer.w1 = init_uniform({d, 4 * d}, d, rng);
    layer.b1 = init_uniform({4 * d}, d, rng);
    layer.w2 = init_uniform({4 * d, d}, 4 * d, rng);
    layer.b2 = init_uniform({d}, 4 * d, rng);
    layers_.push_back(std::move(layer));
  }
  final_g_ = Tensor::full({d}, 1.0, true);
  final_b_ = Tensor::zeros({d}, true);
}

std::vector<ad::NamedParam> Encoder::parameters() const {
  std::vector<ad::NamedParam> out{{"encoder.token_emb", token_emb_}, {"encoder.pos_emb", pos_emb_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& y = layers_[l];
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    for (auto& [name, t] : std::initializer_list<std::pair<const char*, Tensor>>{
             {"ln1_g", y.ln1_g}, {"ln1_b", y.ln1_b}, {"wq", y.wq}, {"bq", y.bq}, {"wk", y.wk},
             {"bk", y.bk},       {"wv", y.wv},       {"bv", y.bv}, {"wo", y.wo}, {"bo", y.bo},
             {"ln2_g", y.ln2_g}, {"ln2_b", y.ln2_b}, {"w1", y.w1}, {"b1", y.b1}, {"w2", y.w2},
             {"b2", y.b2}}) {
      out.push_back({p + name, t});
    }
  }
  out.push_back({"encoder.final_g", final_g_});
  out.push_back({"encoder.final_b", final_b_});
  return out;
}

Tensor Encoder::forward(const TokenBatch& batch, bool training, std::mt19937_64* rng) const {
  batch.validate();
  const std::size_t B = batch.batch, T = batch.seq_len, d = config_.d_model;
  if (T > config_.max_seq_len) {
    throw ArgumentError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                        std::to_string(config_.max_seq_len));
  }
  for (std::int32_t id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(config_.vocab_size));
    }
  }
  const double p_drop = (training && rng) ? config_.dropout : 0.0;
  auto drop = [&](const Tensor& t) { return p_drop > 0.0 ? ad::dropout(t, p_drop, *rng) : t; };

  std::vector<std::int32_t> positions(B * T);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % T);
  Tensor h = ad::add(ad::embedding(token_emb_, batch.ids), ad::embedding(pos_emb_, positions));
  h = drop(ad::reshape(h, {B, T, d}));

  for (const Layer& y : layers_) {
    Tensor a = ad::layer_norm(h, y.ln1_g, y.ln1_b);
    Tensor att = ad::multi_head_attention(ad::linear(a, y.wq, y.bq), ad::linear(a, y.wk, y.bk),
                                          ad::linear(a, y.wv, y.bv), config_.n_heads, batch.mask);
    h = ad::add(h, drop(ad::linear(att, y.wo, y.bo)));
    Tensor f = ad::layer_norm(h, y.ln2_g, y.ln2_b);
    h = ad::add(h, drop(ad::linear(ad::gelu(ad::linear(f, y.w1, y.b1)), y.w2, y.b2)));
  }
  return ad::layer_norm(h, final_g_, final_b_);
}

Tensor pool_cls(const Tensor& hidden) {
  if (hidden.rank() != 3) throw ShapeError("pool_cls: expected [B x T x d]");
  const std::size_t B = hidden.dim(0), T = hidden.dim(1), d = hidden.dim(2);
  const auto x = hidden.data();
  std::vector<double> out(B * d);
  for (std::size_t b = 0; b < B; ++b) std::copy_n(x.data() + b * T * d, d, out.data() + b * d);
  return ad::make_result({B, d}, std::move(out), {hidden}, [B, T, d](ad::detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < d; ++j) g[b * T * d + j] += self.grad[b * d + j];
    }
  });
}

Tensor pool_mean_masked(const Tensor& hidden, std::span<const std::uint8_t> mask) {
  if (hidden.rank() != 3) throw ShapeError("pool_mean_masked: expected [B x T x d]");
  const std::size_t B = hidden.dim(0), T = hidden.dim(1), d = hidden.dim(2);
  if (mask.size() != B * T) throw ShapeError("pool_mean_masked: mask size mismatch");
  const auto x = hidden.data();
  auto inv_counts = std::make_shared<std::vector<double>>(B);
  auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  std::vector<double> out(B * d, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (!mask[b * T + t]) continue;
      ++n;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += x[(b * T + t) * d + j];
    }
    if (n == 0) throw ArgumentError("pool_mean_masked: row " + std::to_string(b) + " has no unmasked position");
    (*inv_counts)[b] = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= (*inv_counts)[b];
  }
  return ad::make_result({B, d}, std::move(out), {hidden}, [B, T, d, inv_counts, mask_copy](ad::detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        if (!(*mask_copy)[b * T + t]) continue;
        for (std::size_t j = 0; j < d; ++j) g[(b * T + t) * d + j] += self.grad[b * d + j] * (*inv_counts)[b];
      }
    }
  });
}

}  // namespace typoreg
