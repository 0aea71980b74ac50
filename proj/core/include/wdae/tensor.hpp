#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// Every op that has at least one input with requires_grad records itself on
// the output node (inputs + a backward closure). The recorded nodes form the
// computation record of a loss; Tensor::backward() orders them topologically
// and replays each op's backward exactly once in reverse order.
//
// A record is confined to the thread that built it. Leaves (parameters) may be
// read concurrently as long as nobody is mutating them.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wdae/rng.hpp"

namespace wdae {

using Shape = std::vector<std::size_t>;

enum class Mode { train, eval };

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t size() const;

  [[nodiscard]] std::span<const double> data() const;
  /// Direct write access. Only meaningful for leaves (parameters, inputs);
  /// mutating an interior node does not invalidate anything downstream.
  [[nodiscard]] std::span<double> mutable_data();

  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool has_grad() const;
  /// Gradient buffer; all zeros if nothing has flowed in yet.
  [[nodiscard]] std::vector<double> grad() const;
  void zero_grad();

  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t i) const;
  [[nodiscard]] double at(std::size_t i, std::size_t j) const;

  /// Same values, no history, requires_grad=false.
  [[nodiscard]] Tensor detach() const;

  /// Populates grad on every requires_grad tensor reachable from this scalar.
  /// Leaf gradients accumulate across calls; interior gradients are reset.
  void backward() const;

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- linear algebra and elementwise arithmetic -----------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);

/// x[m×n] + row[n], broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& row);
/// x[m×n] ⊙ row[n], broadcast over rows.
Tensor mul_rowwise(const Tensor& x, const Tensor& row);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Sparse row mixing in CSR form: output row r is
/// sum_{k in [offsets[r], offsets[r+1])} weights[k] * x[sources[k]].
struct RowMixing {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> sources;
  std::vector<double> weights;

  [[nodiscard]] std::size_t num_outputs() const { return offsets.size() - 1; }
};

Tensor mix_rows(const Tensor& x, const RowMixing& mixing);

// ---- nonlinearities and normalization --------------------------------------

/// softmax(inverse_temperature * x) along `axis`, max-subtracted.
Tensor softmax_scaled(const Tensor& x, double inverse_temperature, std::size_t axis);
/// Each slice along `axis` divided by max(norm, 1e-12).
Tensor l2_normalize(const Tensor& x, std::size_t axis);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// Per-channel batch normalization over the rows of a [rows×channels] input.
/// Running statistics sit behind a shared pointer so a model shared read-only
/// in eval mode can still be updated by the single training thread.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  std::shared_ptr<BatchNormStats> running;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm(std::size_t channels = 0);
  [[nodiscard]] std::size_t channels() const { return running ? running->mean.size() : 0; }
};

/// Train mode normalizes with batch statistics (biased variance) and updates
/// the running statistics (unbiased variance); eval mode uses the running
/// statistics and leaves them untouched.
Tensor batch_norm(const Tensor& x, const BatchNorm& params, Mode mode);

enum class DropoutScope {
  per_element,
  per_column,  // one mask entry per channel, shared by every row
};

/// Inverted dropout. Train mode needs a stream; eval mode is the identity.
Tensor dropout(const Tensor& x, double drop_probability, Mode mode, Rng* rng,
               DropoutScope scope = DropoutScope::per_element);

/// Mean over rows of -score[label] + logsumexp(scores row).
Tensor cross_entropy_from_scores(const Tensor& scores, std::span<const std::size_t> labels);

}  // namespace wdae
