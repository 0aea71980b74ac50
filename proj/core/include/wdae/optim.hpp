#pragma once

#include <vector>

#include "wdae/tensor.hpp"

namespace wdae {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with classical momentum and L2 weight decay folded into the gradient:
///   v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdConfig config);

  /// Applies one update from the parameters' current grad buffers (a missing
  /// buffer counts as zero) scaled by `grad_scale`.
  void step(double grad_scale = 1.0);
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  [[nodiscard]] const SgdConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor> params_;
  SgdConfig config_;
  std::vector<std::vector<double>> velocity_;
};

/// Single in-place update of one buffer; exposed for direct testing.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                const SgdConfig& config);

}  // namespace wdae
