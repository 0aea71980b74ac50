#include "wdae/optim.hpp"

#include "wdae/errors.hpp"

namespace wdae {

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                const SgdConfig& config) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ShapeError("sgd_update: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = config.momentum * velocity[i] + (grad[i] + config.weight_decay * param[i]);
    param[i] -= config.lr * velocity[i];
  }
}

Sgd::Sgd(std::vector<Tensor> params, SgdConfig config) : params_(std::move(params)), config_(config) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void Sgd::step(double grad_scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<double> grad = params_[i].grad();
    if (grad_scale != 1.0) {
      for (double& g : grad) g *= grad_scale;
    }
    sgd_update(params_[i].mutable_data(), grad, velocity_[i], config_);
  }
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace wdae
