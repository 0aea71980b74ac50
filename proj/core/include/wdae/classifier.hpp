#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wdae/archive.hpp"
#include "wdae/features.hpp"
#include "wdae/tensor.hpp"

namespace wdae {

/// N x d matrix of unit-norm class weight rows plus the class ids they belong
/// to and the multiplier applied to cosine scores.
struct ClassifierWeights {
  std::size_t dim = 0;
  std::vector<double> rows;  // num_classes * dim, row-major
  std::vector<std::uint32_t> class_ids;
  double scale = 10.0;

  [[nodiscard]] std::size_t num_classes() const { return class_ids.size(); }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return std::span(rows).subspan(i * dim, dim); }
  [[nodiscard]] std::size_t index_of(std::uint32_t class_id) const;
  [[nodiscard]] Tensor as_tensor(bool requires_grad = false) const;

  /// Unit rows (within 1e-6, or exactly zero) and unique ids.
  void validate() const;
};

/// scale * normalize(features) . weights^T. Weight rows are used as given, so
/// un-normalized reconstructions can be scored too.
Tensor cosine_scores(const Tensor& features, const Tensor& weights, double scale);
Tensor score(const Tensor& features, const ClassifierWeights& weights);

struct NovelExamples {
  std::uint32_t class_id = 0;
  std::vector<double> values;  // K * dim
};

/// Weight imprinting: base rows copied verbatim, then one row per novel class
/// holding the renormalized mean of its normalized examples.
ClassifierWeights initial_estimate(std::span<const NovelExamples> novel, const ClassifierWeights& base);

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double scale = 10.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Cosine-classifier training of the base-class rows on the training portion
/// of every base class. Rows start at the imprinted class means and are
/// renormalized after every SGD step.
ClassifierWeights pretrain_base(const FeatureDataset& dataset, const PretrainConfig& config);

/// Fraction of rows whose label ranks within the top k. Ties go to the lower
/// class index.
double topk_accuracy(const Tensor& scores, std::span<const std::size_t> labels, std::size_t k);

/// weights.bin (matrix layout), classes.bin (id layout), meta.txt.
void save_weights(const ClassifierWeights& weights, const std::filesystem::path& dir, Meta meta = {});
ClassifierWeights load_weights(const std::filesystem::path& dir);

}  // namespace wdae
