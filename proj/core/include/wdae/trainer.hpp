#pragma once

// Episodic training of the weight denoiser on "fake" novel classes drawn from
// the base split.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wdae/class_graph.hpp"
#include "wdae/classifier.hpp"
#include "wdae/features.hpp"
#include "wdae/rng.hpp"
#include "wdae/wdae_model.hpp"

namespace wdae {

struct EpisodeConfig {
  std::size_t num_fake_novel = 5;
  std::size_t shots = 1;
  std::size_t num_validation = 15;
  double noise_sigma = 0.1;
  bool stratified = true;
  double holdout_fraction = 0.2;  // episodes only touch each class's training portion

  void validate() const;
};

struct ExampleRef {
  std::size_t class_index = 0;  // into FeatureDataset::classes
  std::size_t example = 0;

  friend bool operator==(const ExampleRef&, const ExampleRef&) = default;
};

/// Rows and labels are ordered base classes first, then fake-novel classes.
struct Episode {
  std::size_t dim = 0;
  std::vector<std::uint32_t> base_ids;
  std::vector<std::uint32_t> fake_novel_ids;
  std::vector<NovelExamples> novel_train;
  std::vector<ExampleRef> novel_train_refs;
  std::vector<double> validation_features;  // M x d
  std::vector<std::size_t> validation_labels;
  std::vector<ExampleRef> validation_refs;
  std::vector<double> target_weights;  // pretrained rows, num_classes() x d

  [[nodiscard]] std::size_t num_classes() const { return base_ids.size() + fake_novel_ids.size(); }
  [[nodiscard]] std::vector<std::uint32_t> class_ids() const;
};

Episode sample_episode(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                       const EpisodeConfig& config, Rng& rng);

struct AblationFlags {
  bool no_noise = false;
  bool noisy_targets_as_input = false;
  bool no_cls_loss = false;
  bool no_rec_loss = false;
};

struct NoisyInput {
  Tensor input;               // what the denoiser sees
  std::vector<double> clean;  // the same rows before noise; the class graph is built from these
};

NoisyInput make_noisy_input(const Episode& episode, const ClassifierWeights& base_weights, double sigma, Rng& rng,
                            const AblationFlags& flags = {});

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t episodes_per_epoch = 100;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_drop_at = 2.0 / 3.0;  // fraction of epochs after which lr is multiplied by lr_drop
  double lr_drop = 0.1;
  std::size_t accumulation = 1;  // episodes per optimizer step
  double rec_weight = 1.0;
  double cls_weight = 1.0;
  AblationFlags ablation;
  double scale = 10.0;
  std::size_t validation_episodes = 0;  // per-epoch accuracy check on novel_val; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossParts {
  Tensor total;
  double rec = 0.0;
  double cls = 0.0;
};

/// (1/N) sum ||w_hat_i - w*_i||^2 + mean validation cross-entropy of the
/// scaled cosine scores against w_hat. Ablation flags zero their term.
LossParts episode_loss(const Episode& episode, const WdaeModel& model, const ClassGraph* graph, const Tensor& input,
                       const TrainConfig& config, Rng* dropout_rng);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_rec = 0.0;
  double mean_cls = 0.0;
  std::optional<double> val_top1;
  std::optional<double> val_top1_initial;
};

struct TrainResult {
  WdaeModel model;
  std::vector<std::string> log;
  std::vector<EpochSummary> epochs;
};

using LogSink = std::function<void(const std::string&)>;

/// Streams per episode: derive_seed(seed, global_episode + 1) split into
/// sampling (1), noise (2) and dropout (3). The model is initialized from
/// derive_seed(seed, 0).
TrainResult train(const FeatureDataset& dataset, const ClassifierWeights& base_weights, const ModelConfig& model_config,
                  const EpisodeConfig& episode_config, const TrainConfig& config, const LogSink& sink = {});

struct DenoisingStats {
  double input_error = 0.0;   // mean over rows of ||w_tilde - w*||
  double output_error = 0.0;  // mean over rows of ||r(w_tilde) - w*||
  std::size_t episodes = 0;
};

/// Reconstruction error of an eval-mode model on freshly sampled episodes.
DenoisingStats measure_denoising(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                                 const WdaeModel& model, const EpisodeConfig& config, std::size_t episodes,
                                 std::uint64_t seed);

}  // namespace wdae
