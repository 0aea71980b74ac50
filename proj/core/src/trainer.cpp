#include "wdae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wdae/errors.hpp"
#include "wdae/evaluator.hpp"
#include "wdae/optim.hpp"

namespace wdae {

void EpisodeConfig::validate() const {
  if (num_fake_novel == 0) throw ConfigError("episode: need at least one fake-novel class");
  if (shots == 0) throw ConfigError("episode: shots must be positive");
  if (num_validation == 0) throw ConfigError("episode: need at least one validation example");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("episode: noise sigma must be >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("episode: holdout fraction must lie in [0, 1)");
}

void TrainConfig::validate() const {
  if (epochs == 0 || episodes_per_epoch == 0) throw ConfigError("train: epochs and episodes per epoch must be positive");
  if (!(lr >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
  if (!(lr_drop_at >= 0.0 && lr_drop_at <= 1.0)) throw ConfigError("train: lr drop point must lie in [0, 1]");
  if (accumulation == 0) throw ConfigError("train: accumulation must be positive");
  if (!(scale > 0.0)) throw ConfigError("train: score scale must be positive");
}

std::vector<std::uint32_t> Episode::class_ids() const {
  std::vector<std::uint32_t> ids = base_ids;
  ids.insert(ids.end(), fake_novel_ids.begin(), fake_novel_ids.end());
  return ids;
}

Episode sample_episode(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                       const EpisodeConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = dataset.dim;
  if (base_weights.dim != d) throw ShapeError("episode: base weights and dataset disagree on the dimension");
  const auto base = dataset.classes_in(Split::base);
  if (base.size() <= config.num_fake_novel) {
    throw SamplingError("episode: " + std::to_string(config.num_fake_novel) + " fake-novel classes need more than that many base classes, found " +
                        std::to_string(base.size()));
  }

  auto picked = rng.sample_without_replacement(base.size(), config.num_fake_novel);
  std::vector<bool> is_fake(base.size(), false);
  for (std::size_t p : picked) is_fake[p] = true;

  Episode ep;
  ep.dim = d;
  std::vector<std::size_t> rows;  // dataset class index per episode row
  for (std::size_t b = 0; b < base.size(); ++b) {
    if (!is_fake[b]) {
      rows.push_back(base[b]);
      ep.base_ids.push_back(dataset.classes[base[b]].class_id);
    }
  }

  // Per-row pools of usable example indices; fake-novel shots are removed.
  std::vector<std::vector<std::size_t>> available(base.size() - config.num_fake_novel);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t n = training_count(dataset.num_examples(rows[r]), config.holdout_fraction);
    available[r].resize(n);
    for (std::size_t e = 0; e < n; ++e) available[r][e] = e;
  }
  for (std::size_t p : picked) {
    const std::size_t c = base[p];
    const std::uint32_t id = dataset.classes[c].class_id;
    const std::size_t n = training_count(dataset.num_examples(c), config.holdout_fraction);
    if (n < config.shots) {
      throw SamplingError("episode: class " + std::to_string(id) + " has " + std::to_string(n) +
                          " training examples, fewer than " + std::to_string(config.shots) + " shots");
    }
    auto order = rng.sample_without_replacement(n, n);
    NovelExamples ex{id, {}};
    for (std::size_t k = 0; k < config.shots; ++k) {
      auto v = dataset.example(c, order[k]);
      ex.values.insert(ex.values.end(), v.begin(), v.end());
      ep.novel_train_refs.push_back({c, order[k]});
    }
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(config.shots), order.end());
    std::sort(rest.begin(), rest.end());
    available.push_back(std::move(rest));
    ep.fake_novel_ids.push_back(id);
    ep.novel_train.push_back(std::move(ex));
    rows.push_back(c);
  }

  const std::size_t n_classes = rows.size();
  auto add_validation = [&](std::size_t row, std::size_t example) {
    auto v = dataset.example(rows[row], example);
    ep.validation_features.insert(ep.validation_features.end(), v.begin(), v.end());
    ep.validation_labels.push_back(row);
    ep.validation_refs.push_back({rows[row], example});
  };
  if (config.stratified) {
    std::vector<std::size_t> quota(n_classes, config.num_validation / n_classes);
    for (std::size_t r : rng.sample_without_replacement(n_classes, config.num_validation % n_classes)) ++quota[r];
    for (std::size_t r = 0; r < n_classes; ++r) {
      if (quota[r] == 0) continue;
      if (available[r].size() < quota[r]) {
        throw SamplingError("episode: class " + std::to_string(dataset.classes[rows[r]].class_id) + " has " +
                            std::to_string(available[r].size()) + " examples left for " + std::to_string(quota[r]) +
                            " validation draws");
      }
      for (std::size_t i : rng.sample_without_replacement(available[r].size(), quota[r])) {
        add_validation(r, available[r][i]);
      }
    }
  } else {
    std::vector<ExampleRef> pool;
    for (std::size_t r = 0; r < n_classes; ++r) {
      for (std::size_t e : available[r]) pool.push_back({r, e});
    }
    if (pool.size() < config.num_validation) {
      throw SamplingError("episode: only " + std::to_string(pool.size()) + " examples for " +
                          std::to_string(config.num_validation) + " validation draws");
    }
    for (std::size_t i : rng.sample_without_replacement(pool.size(), config.num_validation)) {
      add_validation(pool[i].class_index, pool[i].example);
    }
  }

  for (std::uint32_t id : ep.class_ids()) {
    auto row = base_weights.row(base_weights.index_of(id));
    ep.target_weights.insert(ep.target_weights.end(), row.begin(), row.end());
  }
  return ep;
}

NoisyInput make_noisy_input(const Episode& episode, const ClassifierWeights& base_weights, double sigma, Rng& rng,
                            const AblationFlags& flags) {
  NoisyInput out;
  if (flags.noisy_targets_as_input) {
    out.clean = episode.target_weights;
  } else {
    ClassifierWeights kept;
    kept.dim = episode.dim;
    kept.scale = base_weights.scale;
    for (std::uint32_t id : episode.base_ids) {
      auto row = base_weights.row(base_weights.index_of(id));
      kept.rows.insert(kept.rows.end(), row.begin(), row.end());
      kept.class_ids.push_back(id);
    }
    out.clean = initial_estimate(episode.novel_train, kept).rows;
  }
  std::vector<double> noisy = out.clean;
  if (!flags.no_noise) {
    for (double& v : noisy) v += sigma * rng.normal();
  }
  out.input = Tensor::from({episode.num_classes(), episode.dim}, std::move(noisy));
  return out;
}

LossParts episode_loss(const Episode& episode, const WdaeModel& model, const ClassGraph* graph, const Tensor& input,
                       const TrainConfig& config, Rng* dropout_rng) {
  const std::size_t n = episode.num_classes(), d = episode.dim;
  const Tensor w_hat = model.reconstruct(input, graph, Mode::train, dropout_rng).weights;
  const Tensor target = Tensor::from({n, d}, episode.target_weights);
  const Tensor rec = scale(sum(square(sub(w_hat, target))), 1.0 / static_cast<double>(n));
  const Tensor val = Tensor::from({episode.validation_labels.size(), d}, episode.validation_features);
  const Tensor cls = cross_entropy_from_scores(cosine_scores(val, w_hat, config.scale), episode.validation_labels);
  const double rec_w = config.ablation.no_rec_loss ? 0.0 : config.rec_weight;
  const double cls_w = config.ablation.no_cls_loss ? 0.0 : config.cls_weight;
  return {add(scale(rec, rec_w), scale(cls, cls_w)), rec.item(), cls.item()};
}

namespace {

std::string format_line(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

}  // namespace

TrainResult train(const FeatureDataset& dataset, const ClassifierWeights& base_weights, const ModelConfig& model_config,
                  const EpisodeConfig& episode_config, const TrainConfig& config, const LogSink& sink) {
  episode_config.validate();
  config.validate();
  ModelConfig mc = model_config;
  mc.dim = dataset.dim;
  TrainResult result{WdaeModel(mc, derive_seed(config.seed, 0)), {}, {}};
  WdaeModel& model = result.model;
  Sgd sgd(model.parameters(), SgdConfig{config.lr, config.momentum, config.weight_decay});
  auto emit = [&](std::string line) {
    if (sink) sink(line);
    result.log.push_back(std::move(line));
  };

  const auto drop_epoch = static_cast<std::size_t>(std::floor(config.lr_drop_at * static_cast<double>(config.epochs)));
  std::size_t pending = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    sgd.set_lr(epoch >= drop_epoch && config.lr_drop_at < 1.0 ? config.lr * config.lr_drop : config.lr);
    EpochSummary summary;
    summary.epoch = epoch + 1;
    for (std::size_t e = 0; e < config.episodes_per_epoch; ++e) {
      const std::uint64_t global = epoch * config.episodes_per_epoch + e;
      const std::uint64_t episode_seed = derive_seed(config.seed, global + 1);
      Rng sampling(derive_seed(episode_seed, 1)), noise(derive_seed(episode_seed, 2)), drop(derive_seed(episode_seed, 3));

      const Episode ep = sample_episode(dataset, base_weights, episode_config, sampling);
      const NoisyInput in = make_noisy_input(ep, base_weights, episode_config.noise_sigma, noise, config.ablation);
      std::optional<ClassGraph> graph;
      if (mc.variant == Variant::gnn) {
        graph = build_graph(in.clean, mc.dim, mc.neighbors, mc.inverse_temperature);
      }
      const LossParts loss = episode_loss(ep, model, graph ? &*graph : nullptr, in.input, config, &drop);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        throw TrainingError(format_line("non-finite loss at epoch %zu episode %zu (episode seed %llu)", epoch + 1, e + 1,
                                        static_cast<unsigned long long>(episode_seed)));
      }
      loss.total.backward();
      if (++pending == config.accumulation || e + 1 == config.episodes_per_epoch) {
        sgd.step(1.0 / static_cast<double>(pending));
        sgd.zero_grad();
        pending = 0;
      }
      summary.mean_loss += value;
      summary.mean_rec += loss.rec;
      summary.mean_cls += loss.cls;
      emit(format_line("epoch=%zu episode=%zu loss=%.9g rec=%.9g cls=%.9g", epoch + 1, e + 1, value, loss.rec, loss.cls));
    }
    const auto count = static_cast<double>(config.episodes_per_epoch);
    summary.mean_loss /= count;
    summary.mean_rec /= count;
    summary.mean_cls /= count;

    std::string line = format_line("epoch=%zu mean_loss=%.9g mean_rec=%.9g mean_cls=%.9g", epoch + 1, summary.mean_loss,
                                   summary.mean_rec, summary.mean_cls);
    if (config.validation_episodes > 0 && !dataset.classes_in(Split::novel_val).empty()) {
      EvalConfig ec;
      ec.shots = episode_config.shots;
      ec.queries_per_class = 5;
      ec.episodes = config.validation_episodes;
      ec.split = Split::novel_val;
      ec.seed = derive_seed(config.seed, 0xba1);
      ec.holdout_fraction = episode_config.holdout_fraction;
      const EvalReport r = run_eval(dataset, base_weights, model, ec);
      summary.val_top1 = r.metrics.at("novel_top1").mean;
      summary.val_top1_initial = r.metrics.at("novel_top1_initial").mean;
      line += format_line(" val_top1=%.6f val_top1_initial=%.6f", *summary.val_top1, *summary.val_top1_initial);
    }
    emit(std::move(line));
    result.epochs.push_back(summary);
  }
  return result;
}

DenoisingStats measure_denoising(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                                 const WdaeModel& model, const EpisodeConfig& config, std::size_t episodes,
                                 std::uint64_t seed) {
  DenoisingStats stats;
  std::size_t rows = 0;
  const ModelConfig& mc = model.config();
  for (std::size_t i = 0; i < episodes; ++i) {
    const std::uint64_t episode_seed = derive_seed(seed, i);
    Rng sampling(derive_seed(episode_seed, 1)), noise(derive_seed(episode_seed, 2));
    const Episode ep = sample_episode(dataset, base_weights, config, sampling);
    const NoisyInput in = make_noisy_input(ep, base_weights, config.noise_sigma, noise);
    std::optional<ClassGraph> graph;
    if (mc.variant == Variant::gnn) graph = build_graph(in.clean, mc.dim, mc.neighbors, mc.inverse_temperature);
    const Tensor r = model.reconstruct(in.input, graph ? &*graph : nullptr, Mode::eval, nullptr).weights;
    const std::size_t d = ep.dim;
    auto x = in.input.data();
    auto y = r.data();
    for (std::size_t row = 0; row < ep.num_classes(); ++row) {
      double in_ss = 0.0, out_ss = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = ep.target_weights[row * d + k];
        in_ss += (x[row * d + k] - t) * (x[row * d + k] - t);
        out_ss += (y[row * d + k] - t) * (y[row * d + k] - t);
      }
      stats.input_error += std::sqrt(in_ss);
      stats.output_error += std::sqrt(out_ss);
      ++rows;
    }
  }
  if (rows > 0) {
    stats.input_error /= static_cast<double>(rows);
    stats.output_error /= static_cast<double>(rows);
  }
  stats.episodes = episodes;
  return stats;
}

}  // namespace wdae
