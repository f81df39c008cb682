#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "typoreg/autodiff/tensor.hpp"

namespace typoreg::ad {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;  // whether decoupled weight decay applies
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with bias-corrected moments and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, AdamWConfig config);

  /// Throws StateError if any parameter has no gradient buffer.
  void step();
  void zero_grad();

  std::int64_t steps() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  const std::vector<NamedParam>& params() const noexcept { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace typoreg::ad
