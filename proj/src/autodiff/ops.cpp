#include "typoreg/autodiff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "typoreg/error.hpp"

namespace typoreg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Gradient buffer of a parent, or nullptr when it does not take one.
std::vector<double>* grad_of(detail::Node& self, std::size_t i) {
  detail::Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

const std::vector<double>& value_of(detail::Node& self, std::size_t i) { return self.parents[i]->value; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    MapC dc(self.grad.data(), m, n);
    if (auto* ga = grad_of(self, 0)) {
      Map(ga->data(), m, k).noalias() += dc * MapC(value_of(self, 1).data(), k, n).transpose();
    }
    if (auto* gb = grad_of(self, 1)) {
      Map(gb->data(), k, n).noalias() += MapC(value_of(self, 0).data(), m, k).transpose() * dc;
    }
  });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  if (op == Elementwise::GeluTanh) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = x[i];
      out[i] = 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
    }
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
      auto* ga = grad_of(self, 0);
      if (!ga) return;
      const auto& x = value_of(self, 0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = x[i];
        const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
        (*ga)[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * u * dt);
      }
    });
  }

  if (!b.defined()) throw ArgumentError("elementwise: binary op needs two operands");
  const std::size_t na = a.numel(), nb = b.numel();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw ShapeError("elementwise: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Shape shape = (na >= nb) ? a.shape() : b.shape();
  const std::size_t n = numel_of(shape);
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t sa = (na == 1 && n != 1) ? 0 : 1;  // stride 0 broadcasts
  const std::size_t sb = (nb == 1 && n != 1) ? 0 : 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i * sa], v = y[i * sb];
    switch (op) {
      case Elementwise::Add: out[i] = u + v; break;
      case Elementwise::Sub: out[i] = u - v; break;
      case Elementwise::Mul: out[i] = u * v; break;
      default: break;
    }
  }
  return make_result(shape, std::move(out), {a, b}, [op, n, sa, sb](detail::Node& self) {
    auto* ga = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    const auto& x = value_of(self, 0);
    const auto& y = value_of(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i];
      switch (op) {
        case Elementwise::Add:
          if (ga) (*ga)[i * sa] += g;
          if (gb) (*gb)[i * sb] += g;
          break;
        case Elementwise::Sub:
          if (ga) (*ga)[i * sa] += g;
          if (gb) (*gb)[i * sb] -= g;
          break;
        case Elementwise::Mul:
          if (ga) (*ga)[i * sa] += g * y[i * sb];
          if (gb) (*gb)[i * sb] += g * x[i * sa];
          break;
        default: break;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Mul, a, b); }
Tensor gelu(const Tensor& a) { return elementwise(Elementwise::GeluTanh, a); }

Tensor scale(const Tensor& a, double factor) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * factor;
    }
  });
}

Tensor softplus(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::log1p(std::exp(-std::abs(x[i]))) + std::max(x[i], 0.0);
  }
  return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = value_of(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sig = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
      (*ga)[i] += self.grad[i] * sig;
    }
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (x.shape().back() != n) {
    throw ShapeError("add_bias: last axis of " + shape_str(x.shape()) + " differs from bias " +
                     shape_str(bias.shape()));
  }
  const auto xv = x.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % n];
  return make_result(x.shape(), std::move(out), {x, bias}, [n](detail::Node& self) {
    auto* gx = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (gx) (*gx)[i] += self.grad[i];
      if (gb) (*gb)[i % n] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape shape = x.shape();
  const std::size_t d = shape.back();
  const std::size_t rows = x.numel() / d;
  Tensor y = add_bias(matmul(reshape(x, {rows, d}), w), b);
  Shape out_shape = shape;
  out_shape.back() = w.dim(1);
  return reshape(y, out_shape);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(xv.size());
  // xhat and 1/sigma per row are kept for the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * g[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [d, rows, xhat, rstd](detail::Node& self) {
                       auto* gx = grad_of(self, 0);
                       auto* gg = grad_of(self, 1);
                       auto* gb = grad_of(self, 2);
                       const auto& g = value_of(self, 1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * d;
                         const double* h = xhat->data() + r * d;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = dy[j] * g[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[j];
                           if (gg) (*gg)[j] += dy[j] * h[j];
                           if (gb) (*gb)[j] += dy[j];
                         }
                         if (!gx) continue;
                         mean_dh /= static_cast<double>(d);
                         mean_dh_h /= static_cast<double>(d);
                         const double rs = (*rstd)[r];
                         for (std::size_t j = 0; j < d; ++j) {
                           (*gx)[r * d + j] += rs * (dy[j] * g[j] - mean_dh - h[j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  const auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(z.size());
  auto label_copy = std::make_shared<std::vector<std::size_t>>(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range for " + std::to_string(classes) + " classes");
    }
    const double* row = z.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[i * classes + c] = std::exp(row[c] - lse);
    total += lse - row[labels[i]];
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  return make_result({1}, {total * inv_b}, {logits},
                     [batch, classes, inv_b, probs, label_copy](detail::Node& self) {
                       auto* gz = grad_of(self, 0);
                       if (!gz) return;
                       const double g = self.grad[0] * inv_b;
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double onehot = (c == (*label_copy)[i]) ? 1.0 : 0.0;
                           (*gz)[i * classes + c] += g * ((*probs)[i * classes + c] - onehot);
                         }
                       }
                     });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t rows = pred.dim(0);
  const auto p = pred.data();
  const auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double inv_n = 1.0 / static_cast<double>(rows);
  return make_result({1}, {total * inv_n}, {pred, target}, [inv_n](detail::Node& self) {
    auto* gp = grad_of(self, 0);
    auto* gt = grad_of(self, 1);
    const auto& p = value_of(self, 0);
    const auto& t = value_of(self, 1);
    const double g = self.grad[0] * 2.0 * inv_n;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = g * (p[i] - t[i]);
      if (gp) (*gp)[i] += diff;
      if (gt) (*gt)[i] -= diff;
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](detail::Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (double& v : *ga) v += self.grad[0];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const auto tv = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ArgumentError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto id_copy = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [d, id_copy](detail::Node& self) {
    auto* gt = grad_of(self, 0);
    if (!gt) return;
    for (std::size_t i = 0; i < id_copy->size(); ++i) {
      double* dst = gt->data() + static_cast<std::size_t>((*id_copy)[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::span<const std::uint8_t> mask) {
  require_rank(q, 3, "multi_head_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("multi_head_attention: q, k, v shapes differ");
  }
  const std::size_t batch = q.dim(0), seq = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw ShapeError("multi_head_attention: d_model not divisible by heads");
  if (mask.size() != batch * seq) throw ShapeError("multi_head_attention: mask size mismatch");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto qv = q.data();
  const auto kv = k.data();
  const auto vv = v.data();
  // Attention weights [B, H, T, T], zero on masked keys.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq, 0.0);
  auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  std::vector<double> out(qv.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mrow = mask.data() + b * seq;
    bool any = false;
    for (std::size_t j = 0; j < seq; ++j) any = any || mrow[j];
    if (!any) throw ArgumentError("multi_head_attention: row " + std::to_string(b) + " has no valid key");
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + ((b * heads + h) * seq) * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = qv.data() + (b * seq + i) * d + h * dh;
        double* pi = P + i * seq;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mrow[j]) continue;
          const double* kj = kv.data() + (b * seq + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          pi[j] = s * sc;
          mx = std::max(mx, pi[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mrow[j]) continue;
          pi[j] = std::exp(pi[j] - mx);
          z += pi[j];
        }
        double* oi = out.data() + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mrow[j]) continue;
          pi[j] /= z;
          const double* vj = vv.data() + (b * seq + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
        }
      }
    }
  }
  return make_result(q.shape(), std::move(out), {q, k, v},
                     [batch, seq, d, heads, dh, sc, probs, mask_copy](detail::Node& self) {
                       auto* gq = grad_of(self, 0);
                       auto* gk = grad_of(self, 1);
                       auto* gv = grad_of(self, 2);
                       const auto& qv = value_of(self, 0);
                       const auto& kv = value_of(self, 1);
                       const auto& vv = value_of(self, 2);
                       std::vector<double> dp(seq);
                       for (std::size_t b = 0; b < batch; ++b) {
                         const std::uint8_t* mrow = mask_copy->data() + b * seq;
                         for (std::size_t h = 0; h < heads; ++h) {
                           const double* P = probs->data() + ((b * heads + h) * seq) * seq;
                           for (std::size_t i = 0; i < seq; ++i) {
                             const double* doi = self.grad.data() + (b * seq + i) * d + h * dh;
                             const double* pi = P + i * seq;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < seq; ++j) {
                               if (!mrow[j]) continue;
                               const double* vj = vv.data() + (b * seq + j) * d + h * dh;
                               double s = 0.0;
                               for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                               dp[j] = s;
                               dot += s * pi[j];
                               if (gv) {
                                 double* gvj = gv->data() + (b * seq + j) * d + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gvj[c] += pi[j] * doi[c];
                               }
                             }
                             const double* qi = qv.data() + (b * seq + i) * d + h * dh;
                             for (std::size_t j = 0; j < seq; ++j) {
                               if (!mrow[j]) continue;
                               const double ds = pi[j] * (dp[j] - dot) * sc;
                               const double* kj = kv.data() + (b * seq + j) * d + h * dh;
                               if (gq) {
                                 double* gqi = gq->data() + (b * seq + i) * d + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                               }
                               if (gk) {
                                 double* gkj = gk->data() + (b * seq + j) * d + h * dh;
                                 for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ArgumentError("dropout probability must be < 1");
  const auto x = a.data();
  auto keep = std::make_shared<std::vector<double>>(x.size());
  std::bernoulli_distribution bern(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*keep)[i] = bern(rng) ? inv : 0.0;
    out[i] = x[i] * (*keep)[i];
  }
  return make_result(a.shape(), std::move(out), {a}, [keep](detail::Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * (*keep)[i];
    }
  });
}

}  // namespace typoreg::ad
