#include "wdae/features.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "wdae/archive.hpp"
#include "wdae/errors.hpp"
#include "wdae/rng.hpp"

namespace wdae {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::base:
      return "base";
    case Split::novel_val:
      return "novel_val";
    case Split::novel_test:
      return "novel_test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "base") return Split::base;
  if (text == "novel_val") return Split::novel_val;
  if (text == "novel_test") return Split::novel_test;
  throw ConfigError("unknown split tag \"" + std::string(text) + "\"");
}

std::size_t FeatureDataset::num_examples(std::size_t class_index) const {
  return classes.at(class_index).values.size() / dim;
}

std::span<const double> FeatureDataset::example(std::size_t class_index, std::size_t example_index) const {
  const auto& values = classes.at(class_index).values;
  if ((example_index + 1) * dim > values.size()) {
    throw IndexError("example " + std::to_string(example_index) + " out of range for class " +
                     std::to_string(classes[class_index].class_id));
  }
  return std::span(values).subspan(example_index * dim, dim);
}

std::vector<std::size_t> FeatureDataset::classes_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t FeatureDataset::index_of(std::uint32_t class_id) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].class_id == class_id) return i;
  }
  throw IndexError("class id " + std::to_string(class_id) + " not in dataset");
}

void FeatureDataset::validate() const {
  if (dim == 0) throw ConfigError("dataset dimension must be positive");
  std::unordered_set<std::uint32_t> seen;
  for (const auto& c : classes) {
    if (!seen.insert(c.class_id).second) throw ConfigError("duplicate class id " + std::to_string(c.class_id));
    if (c.values.empty()) throw ConfigError("class " + std::to_string(c.class_id) + " has no feature vectors");
    if (c.values.size() % dim != 0) {
      throw ConfigError("class " + std::to_string(c.class_id) + " holds a partial feature vector");
    }
    for (double v : c.values) {
      if (!std::isfinite(v)) throw ConfigError("class " + std::to_string(c.class_id) + " has a non-finite value");
    }
  }
}

std::size_t training_count(std::size_t num_examples, double holdout_fraction) {
  if (num_examples == 0) return 0;
  const auto held = static_cast<std::size_t>(std::floor(static_cast<double>(num_examples) * holdout_fraction));
  return held >= num_examples ? 1 : num_examples - held;
}

void save_features(const FeatureDataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::string splits;
  for (const auto& c : dataset.classes) {
    values.insert(values.end(), c.values.begin(), c.values.end());
    labels.insert(labels.end(), c.values.size() / dataset.dim, c.class_id);
    splits += std::to_string(c.class_id) + " " + std::string(to_string(c.split)) + "\n";
  }
  write_matrix_file(dir / "features.bin", static_cast<std::uint32_t>(labels.size()),
                    static_cast<std::uint32_t>(dataset.dim), values);
  write_id_file(dir / "labels.bin", labels);
  write_bytes(dir / "splits.txt", splits);
}

FeatureDataset load_features(const std::filesystem::path& dir) {
  const MatrixFile features = read_matrix_file(dir / "features.bin");
  const std::vector<std::uint32_t> labels = read_id_file(dir / "labels.bin");
  if (labels.size() != features.rows) {
    throw LoadError(LoadErrorKind::dimension_mismatch, (dir / "labels.bin").string() + ": " +
                                                           std::to_string(labels.size()) + " labels for " +
                                                           std::to_string(features.rows) + " feature rows");
  }

  const auto splits_path = dir / "splits.txt";
  std::ifstream splits_in(splits_path);
  if (!splits_in) throw LoadError(LoadErrorKind::missing_file, "missing file " + splits_path.string());
  std::unordered_map<std::uint32_t, Split> split_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(splits_in, line)) {
    ++line_no;
    std::istringstream fields(line);
    long long id = -1;
    std::string tag;
    if (!(fields >> id)) continue;  // blank line
    std::string extra;
    if (!(fields >> tag) || (fields >> extra) || id < 0 || id > 0xffffffffLL) {
      throw LoadError(LoadErrorKind::bad_metadata,
                      splits_path.string() + ":" + std::to_string(line_no) + ": expected \"<class_id> <split>\"");
    }
    try {
      if (!split_of.emplace(static_cast<std::uint32_t>(id), parse_split(tag)).second) {
        throw LoadError(LoadErrorKind::bad_metadata,
                        splits_path.string() + ": class " + std::to_string(id) + " listed twice");
      }
    } catch (const ConfigError& e) {
      throw LoadError(LoadErrorKind::bad_metadata, splits_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }

  FeatureDataset ds;
  ds.dim = features.dim;
  std::unordered_map<std::uint32_t, std::size_t> slot;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::uint32_t id = labels[r];
    auto [it, inserted] = slot.emplace(id, ds.classes.size());
    if (inserted) {
      auto split = split_of.find(id);
      if (split == split_of.end()) {
        throw LoadError(LoadErrorKind::bad_metadata, splits_path.string() + ": no split for class " + std::to_string(id));
      }
      ds.classes.push_back(ClassRecord{id, split->second, {}});
    }
    auto& dst = ds.classes[it->second].values;
    dst.insert(dst.end(), features.values.begin() + static_cast<std::ptrdiff_t>(r * ds.dim),
               features.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * ds.dim));
  }
  for (const auto& [id, split] : split_of) {
    if (!slot.contains(id)) {
      throw LoadError(LoadErrorKind::bad_metadata,
                      splits_path.string() + ": class " + std::to_string(id) + " has no feature vectors");
    }
  }
  return ds;
}

void SyntheticConfig::validate() const {
  if (num_base == 0 || num_novel_val == 0 || num_novel_test == 0) {
    throw ConfigError("synthetic class counts must all be positive");
  }
  if (dim == 0 || examples_per_class == 0) throw ConfigError("synthetic dim and examples per class must be positive");
  if (!(cluster_spread > 0.0)) throw ConfigError("synthetic cluster spread must be positive");
}

FeatureDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  FeatureDataset ds;
  ds.dim = config.dim;
  const std::size_t total = config.num_base + config.num_novel_val + config.num_novel_test;
  ds.classes.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    Rng rng(derive_seed(config.seed, c));
    ClassRecord record;
    record.class_id = static_cast<std::uint32_t>(c);
    record.split = c < config.num_base                          ? Split::base
                   : c < config.num_base + config.num_novel_val ? Split::novel_val
                                                                : Split::novel_test;

    std::vector<double> center(config.dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : center) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& v : center) v /= norm;

    record.values.resize(config.examples_per_class * config.dim);
    for (std::size_t e = 0; e < config.examples_per_class; ++e) {
      double* x = &record.values[e * config.dim];
      double ss = 0.0;
      for (std::size_t j = 0; j < config.dim; ++j) {
        x[j] = center[j] + config.cluster_spread * rng.normal();
        ss += x[j] * x[j];
      }
      const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
      for (std::size_t j = 0; j < config.dim; ++j) x[j] = static_cast<double>(static_cast<float>(x[j] * inv));
    }
    ds.classes.push_back(std::move(record));
  }
  return ds;
}

}  // namespace wdae
