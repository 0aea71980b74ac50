#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace wdae {

enum class Split { base, novel_val, novel_test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ClassRecord {
  std::uint32_t class_id = 0;
  Split split = Split::base;
  std::vector<double> values;  // examples, row-major, each `dim` long
};

/// Precomputed per-class feature vectors plus the base/novel split tags.
struct FeatureDataset {
  std::size_t dim = 0;
  std::vector<ClassRecord> classes;

  [[nodiscard]] std::size_t num_examples(std::size_t class_index) const;
  [[nodiscard]] std::span<const double> example(std::size_t class_index, std::size_t example_index) const;
  /// Indices into `classes` carrying the given split tag, in dataset order.
  [[nodiscard]] std::vector<std::size_t> classes_in(Split split) const;
  [[nodiscard]] std::size_t index_of(std::uint32_t class_id) const;

  /// Throws ConfigError on any broken invariant (dims, ids, empty classes,
  /// non-finite values).
  void validate() const;
};

/// Number of leading examples of a base class used for training; the rest are
/// held out for unified base+novel evaluation. Always keeps at least one.
std::size_t training_count(std::size_t num_examples, double holdout_fraction);

/// Writes features.bin, labels.bin and splits.txt into `dir` (created if
/// needed). Rows are grouped by class in dataset order.
void save_features(const FeatureDataset& dataset, const std::filesystem::path& dir);
FeatureDataset load_features(const std::filesystem::path& dir);

struct SyntheticConfig {
  std::size_t num_base = 20;
  std::size_t num_novel_val = 10;
  std::size_t num_novel_test = 30;
  std::size_t dim = 32;
  std::size_t examples_per_class = 60;
  double cluster_spread = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class centers uniform on the unit sphere; each example is
/// center + N(0, spread^2 I), L2-normalized and rounded to float32 so the
/// in-memory dataset equals its on-disk form. Class ids are 0..n-1 in
/// base, novel_val, novel_test order.
FeatureDataset generate_synthetic(const SyntheticConfig& config);

}  // namespace wdae
