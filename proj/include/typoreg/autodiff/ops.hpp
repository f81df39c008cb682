#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "typoreg/autodiff/tensor.hpp"

namespace typoreg::ad {

enum class Elementwise { Add, Sub, Mul, GeluTanh };

/// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Binary ops take equal shapes, or one side with a single element that is
/// broadcast. GeluTanh is unary and ignores `b`.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor gelu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

/// x[... x n] + bias[n], broadcast over every leading index.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// x[... x d] . w[d x n] + b[n]; leading axes are kept.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Mean over the batch of -log softmax(logits)[label]. logits is [B x C].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// (1/N) sum_i ||pred_i - target_i||^2 over the N rows of [N x d] inputs.
/// Squared distances are summed over d, not averaged.
Tensor mse(const Tensor& pred, const Tensor& target);

Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Rows of table[V x d] selected by ids; result is [n x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Scaled dot-product attention with `heads` heads over q, k, v of shape
/// [B x T x d]. Keys whose mask entry is 0 receive zero weight.
/// `mask` is row-major [B x T].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::span<const std::uint8_t> mask);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

}  // namespace typoreg::ad
