#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "typoreg/autodiff/adamw.hpp"
#include "typoreg/autodiff/tensor.hpp"

namespace typoreg {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t max_seq_len = 32;
  double dropout = 0.0;  // applied only in training mode
  std::uint64_t seed = 1;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// B sequences padded to a common length T. Position 0 holds the CLS id.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;    // B x T
  std::vector<std::uint8_t> mask;   // B x T, 1 = real token
  std::vector<std::string> langs;   // B
  std::vector<std::size_t> labels;  // classification
  std::vector<double> targets;      // relatedness

  /// Number of unmasked tokens in row b (including CLS).
  std::size_t valid_count(std::size_t b) const;
  void validate() const;
};

/// Pads token id lists (each already CLS-prefixed) into a batch.
TokenBatch make_batch(std::span<const std::vector<std::int32_t>> sequences);

/// Pre-norm transformer encoder with learned absolute positions.
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& config);

  /// Hidden states [B x T x d_model]. `rng` drives dropout and may be null
  /// when not training.
  ad::Tensor forward(const TokenBatch& batch, bool training = false, std::mt19937_64* rng = nullptr) const;

  const EncoderConfig& config() const noexcept { return config_; }
  std::vector<ad::NamedParam> parameters() const;

 private:
  struct Layer {
    ad::Tensor ln1_g, ln1_b;
    ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Tensor ln2_g, ln2_b;
    ad::Tensor w1, b1, w2, b2;
  };

  EncoderConfig config_;
  ad::Tensor token_emb_;
  ad::Tensor pos_emb_;
  std::vector<Layer> layers_;
  ad::Tensor final_g_, final_b_;
};

/// Hidden state at position 0 of each row: [B x T x d] -> [B x d].
ad::Tensor pool_cls(const ad::Tensor& hidden);

/// Mean over unmasked positions of each row: [B x T x d] -> [B x d].
ad::Tensor pool_mean_masked(const ad::Tensor& hidden, std::span<const std::uint8_t> mask);

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter.
ad::Tensor init_uniform(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace typoreg
