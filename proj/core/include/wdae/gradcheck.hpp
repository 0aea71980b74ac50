#pragma once

// Central finite-difference checks of every differentiable op and of the full
// episode loss.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wdae/tensor.hpp"

namespace wdae {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so components whose gradient is
  // essentially zero are compared on an absolute scale.
  double floor = 1e-3;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Largest relative error over every component of every input. `f` must be
/// a deterministic function of the inputs' current values returning a scalar.
double max_gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& options = {});

struct GradcheckResult {
  std::string op;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Names accepted by run_gradcheck's filter, in report order.
std::vector<std::string> gradcheck_ops();

/// Every op on at least three randomized shapes, plus the episode loss on a
/// 6-node, d=8 instance. An unknown `only` throws ConfigError.
std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, const std::optional<std::string>& only = std::nullopt,
                                           const GradcheckOptions& options = {});

}  // namespace wdae
