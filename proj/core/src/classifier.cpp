#include "wdae/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "wdae/errors.hpp"
#include "wdae/optim.hpp"
#include "wdae/rng.hpp"

namespace wdae {

namespace {

void normalize_in_place(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double denom = std::max(std::sqrt(ss), 1e-12);
  for (double& x : v) x /= denom;
}

}  // namespace

std::size_t ClassifierWeights::index_of(std::uint32_t class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end()) throw IndexError("class id " + std::to_string(class_id) + " has no weight row");
  return static_cast<std::size_t>(it - class_ids.begin());
}

Tensor ClassifierWeights::as_tensor(bool requires_grad) const {
  return Tensor::from({num_classes(), dim}, rows, requires_grad);
}

void ClassifierWeights::validate() const {
  if (dim == 0 || class_ids.empty()) throw ConfigError("classifier weights are empty");
  if (rows.size() != class_ids.size() * dim) throw ConfigError("classifier weight rows do not match class ids");
  if (!(scale > 0.0)) throw ConfigError("classifier scale must be positive");
  std::unordered_set<std::uint32_t> seen;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (!seen.insert(class_ids[i]).second) throw ConfigError("duplicate class id " + std::to_string(class_ids[i]));
    double ss = 0.0;
    for (double x : row(i)) ss += x * x;
    const double norm = std::sqrt(ss);
    if (norm != 0.0 && std::abs(norm - 1.0) > 1e-6) {
      throw ConfigError("weight row for class " + std::to_string(class_ids[i]) + " has norm " + std::to_string(norm));
    }
  }
}

Tensor cosine_scores(const Tensor& features, const Tensor& weights, double scale) {
  if (features.rank() != 2 || weights.rank() != 2 || features.dim(1) != weights.dim(1)) {
    throw ShapeError("score: feature shape " + to_string(features.shape()) + " does not match weights " +
                     to_string(weights.shape()));
  }
  return wdae::scale(matmul(l2_normalize(features, 1), transpose(weights)), scale);
}

Tensor score(const Tensor& features, const ClassifierWeights& weights) {
  return cosine_scores(features, weights.as_tensor(), weights.scale);
}

ClassifierWeights initial_estimate(std::span<const NovelExamples> novel, const ClassifierWeights& base) {
  ClassifierWeights out = base;
  const std::size_t d = base.dim;
  for (const auto& cls : novel) {
    if (cls.values.empty() || cls.values.size() % d != 0) {
      throw ConfigError("novel class " + std::to_string(cls.class_id) + " needs at least one " + std::to_string(d) +
                        "-dimensional example");
    }
    const std::size_t k = cls.values.size() / d;
    std::vector<double> mean(d, 0.0);
    std::vector<double> example(d);
    for (std::size_t e = 0; e < k; ++e) {
      std::copy_n(&cls.values[e * d], d, example.begin());
      normalize_in_place(example);
      for (std::size_t j = 0; j < d; ++j) mean[j] += example[j];
    }
    for (double& v : mean) v /= static_cast<double>(k);
    normalize_in_place(mean);
    out.rows.insert(out.rows.end(), mean.begin(), mean.end());
    out.class_ids.push_back(cls.class_id);
  }
  return out;
}

ClassifierWeights pretrain_base(const FeatureDataset& dataset, const PretrainConfig& config) {
  const auto base = dataset.classes_in(Split::base);
  if (base.size() < 2) throw SamplingError("pretraining needs at least 2 base classes, found " + std::to_string(base.size()));
  if (config.batch_size == 0) throw ConfigError("pretraining batch size must be positive");
  const std::size_t d = dataset.dim;

  struct Sample {
    std::size_t label;
    std::size_t class_index;
    std::size_t example;
  };
  std::vector<Sample> samples;
  ClassifierWeights w;
  w.dim = d;
  w.scale = config.scale;
  for (std::size_t label = 0; label < base.size(); ++label) {
    const std::size_t c = base[label];
    const std::size_t n = training_count(dataset.num_examples(c), config.holdout_fraction);
    std::vector<double> mean(d, 0.0);
    std::vector<double> x(d);
    for (std::size_t e = 0; e < n; ++e) {
      samples.push_back({label, c, e});
      auto ex = dataset.example(c, e);
      std::copy(ex.begin(), ex.end(), x.begin());
      normalize_in_place(x);
      for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
    }
    normalize_in_place(mean);
    w.rows.insert(w.rows.end(), mean.begin(), mean.end());
    w.class_ids.push_back(dataset.classes[c].class_id);
  }

  Tensor weights = w.as_tensor(true);
  Sgd sgd({weights}, SgdConfig{config.lr, config.momentum, config.weight_decay});
  std::vector<std::size_t> order(samples.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<double> batch;
      std::vector<std::size_t> labels;
      batch.reserve((end - start) * d);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = samples[order[i]];
        auto ex = dataset.example(s.class_index, s.example);
        batch.insert(batch.end(), ex.begin(), ex.end());
        labels.push_back(s.label);
      }
      Tensor z = Tensor::from({end - start, d}, std::move(batch));
      Tensor loss = cross_entropy_from_scores(cosine_scores(z, weights, config.scale), labels);
      sgd.zero_grad();
      loss.backward();
      sgd.step();
      auto values = weights.mutable_data();
      for (std::size_t r = 0; r < base.size(); ++r) normalize_in_place(values.subspan(r * d, d));
    }
    for (double v : weights.data()) {
      if (!std::isfinite(v)) throw TrainingError("base pretraining diverged at epoch " + std::to_string(epoch + 1));
    }
  }
  w.rows.assign(weights.data().begin(), weights.data().end());
  return w;
}

double topk_accuracy(const Tensor& scores, std::span<const std::size_t> labels, std::size_t k) {
  if (scores.rank() != 2) throw ShapeError("topk_accuracy: scores must be a matrix");
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  if (k == 0 || k > n) throw ConfigError("topk_accuracy: k=" + std::to_string(k) + " with " + std::to_string(n) + " classes");
  if (labels.size() != m) throw ShapeError("topk_accuracy: label count does not match score rows");
  auto s = scores.data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t y = labels[i];
    if (y >= n) throw IndexError("topk_accuracy: label " + std::to_string(y) + " out of range");
    const double target = s[i * n + y];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = s[i * n + j];
      if (v > target || (v == target && j < y)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

void save_weights(const ClassifierWeights& weights, const std::filesystem::path& dir, Meta meta) {
  weights.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_matrix_file(dir / "weights.bin", static_cast<std::uint32_t>(weights.num_classes()),
                    static_cast<std::uint32_t>(weights.dim), weights.rows);
  write_id_file(dir / "classes.bin", weights.class_ids);
  char scale[64];
  std::snprintf(scale, sizeof scale, "%.17g", weights.scale);
  meta["dim"] = std::to_string(weights.dim);
  meta["scale"] = scale;
  write_meta(dir / "meta.txt", meta);
}

ClassifierWeights load_weights(const std::filesystem::path& dir) {
  const MatrixFile m = read_matrix_file(dir / "weights.bin");
  ClassifierWeights w;
  w.dim = m.dim;
  w.rows = m.values;
  w.class_ids = read_id_file(dir / "classes.bin");
  if (w.class_ids.size() != m.rows) {
    throw LoadError(LoadErrorKind::dimension_mismatch, (dir / "classes.bin").string() + ": " +
                                                           std::to_string(w.class_ids.size()) + " ids for " +
                                                           std::to_string(m.rows) + " weight rows");
  }
  const Meta meta = read_meta(dir / "meta.txt");
  const auto meta_path = dir / "meta.txt";
  if (std::stoul(meta_value(meta, "dim", meta_path)) != w.dim) {
    throw LoadError(LoadErrorKind::dimension_mismatch, meta_path.string() + ": dim disagrees with weights.bin");
  }
  w.scale = std::stod(meta_value(meta, "scale", meta_path));
  try {
    w.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadErrorKind::bad_metadata, dir.string() + ": " + e.what());
  }
  return w;
}

}  // namespace wdae
