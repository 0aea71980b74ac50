#pragma once

// Denoising autoencoder over classification weight vectors.
//
// GNN variant, two layers over the class graph:
//   message   q(h_i, h_j) = LeakyReLU(Dropout(BatchNorm(W h_i + W h_j + b)))
//   aggregate h_N(i)      = sum_j a_ij q(h_i, h_j)
//   hidden    h_i'        = [h_i ; L2norm(LeakyReLU(Dropout(BatchNorm(U [h_i ; h_N(i)]))))]
//   final     dw_i, o_i   = L2norm / sigmoid halves of F [h_i' ; h_N(i)']
//   output    w_i + o_i * dw_i
// The MLP variant drops every message/aggregation path and feeds h_i alone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wdae/archive.hpp"
#include "wdae/class_graph.hpp"
#include "wdae/rng.hpp"
#include "wdae/tensor.hpp"

namespace wdae {

enum class Variant { gnn, mlp };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view text);

struct ModelConfig {
  Variant variant = Variant::gnn;
  std::size_t dim = 0;
  std::size_t hidden_width = 64;
  double dropout = 0.5;
  double leaky_slope = 0.2;
  // Graph construction settings travel with the model.
  std::size_t neighbors = 10;
  double inverse_temperature = 5.0;

  void validate() const;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  [[nodiscard]] bool defined() const { return weight.defined(); }
  [[nodiscard]] std::size_t in() const { return weight.dim(0); }
  [[nodiscard]] std::size_t out() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
};

struct GnnLayerParams {
  std::size_t input_width = 0;
  Linear message;  // shared by both endpoints of q; unused by the MLP variant
  std::optional<BatchNorm> message_norm;
  Linear update;
  std::optional<BatchNorm> update_norm;  // hidden layer only
};

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required in train mode when dropout > 0
  double dropout = 0.0;
  double leaky_slope = 0.2;
};

/// One message row per (receiver, sender) pair. The dropout mask is drawn
/// once per call and shared by every pair, so q stays symmetric.
Tensor relation_messages(const GnnLayerParams& layer, const Tensor& h, std::span<const std::size_t> receivers,
                         std::span<const std::size_t> senders, const ForwardContext& ctx);

/// h_N(i) for every node, N x hidden_width.
Tensor aggregate(const GnnLayerParams& layer, const Tensor& h, const ClassGraph& graph, const ForwardContext& ctx);

/// [h ; u([h ; h_agg])], or [h ; u(h)] when h_agg is undefined (MLP).
Tensor update_hidden(const GnnLayerParams& layer, const Tensor& h, const Tensor& h_agg, const ForwardContext& ctx);

struct FinalPrediction {
  Tensor delta;  // N x d, unit rows (or guarded zero)
  Tensor gate;   // N x d, in (0, 1)
};

FinalPrediction predict_final(const GnnLayerParams& layer, const Tensor& h, const Tensor& h_agg);

struct Reconstruction {
  Tensor weights;
  Tensor delta;
  Tensor gate;
};

class WdaeModel {
 public:
  WdaeModel(const ModelConfig& config, std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] GnnLayerParams& hidden_layer() { return hidden_; }
  [[nodiscard]] GnnLayerParams& final_layer() { return final_; }
  [[nodiscard]] const GnnLayerParams& hidden_layer() const { return hidden_; }
  [[nodiscard]] const GnnLayerParams& final_layer() const { return final_; }

  /// Learnable tensors in declaration order.
  [[nodiscard]] std::vector<Tensor> parameters() const;
  /// BatchNorm running statistics, same order as the norms appear.
  [[nodiscard]] std::vector<std::shared_ptr<BatchNormStats>> running_stats() const;
  [[nodiscard]] std::size_t parameter_count() const;

  /// Forward pass over an N x d weight matrix. `graph` is required for the
  /// GNN variant and ignored by the MLP variant. Train mode updates the
  /// BatchNorm running statistics.
  [[nodiscard]] Reconstruction reconstruct(const Tensor& w, const ClassGraph* graph, Mode mode, Rng* rng) const;

  /// Independent copy of all parameters and statistics.
  [[nodiscard]] WdaeModel clone() const;

 private:
  ModelConfig config_;
  GnnLayerParams hidden_;
  GnnLayerParams final_;
};

/// One gradient-ascent step w + eps (r(w) - w) in eval mode, rows renormalized.
Tensor refine(const Tensor& w, const ClassGraph* graph, const WdaeModel& model, double step_size);

/// model.bin: every parameter then every running statistic, each as u32 rank,
/// u32 dims, float32 payload. meta.txt: architecture plus `extra`.
void save_model(const WdaeModel& model, const std::filesystem::path& dir, Meta extra = {});
WdaeModel load_model(const std::filesystem::path& dir, Meta* meta_out = nullptr);

}  // namespace wdae
