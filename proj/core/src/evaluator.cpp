#include "wdae/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "wdae/class_graph.hpp"
#include "wdae/digest.hpp"
#include "wdae/errors.hpp"
#include "wdae/rng.hpp"

namespace wdae {

void EvalConfig::validate() const {
  if (shots == 0) throw ConfigError("eval: shots must be positive");
  if (ways && *ways == 0) throw ConfigError("eval: ways must be positive");
  if (queries_per_class == 0) throw ConfigError("eval: queries per class must be positive");
  if (episodes == 0) throw ConfigError("eval: episode count must be positive");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("eval: step size must be finite and >= 0");
  if (topk.empty()) throw ConfigError("eval: top-k list is empty");
  for (std::size_t k : topk) {
    if (k == 0) throw ConfigError("eval: top-k entries must be positive");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("eval: holdout fraction must lie in [0, 1)");
}

MetricSummary aggregate_metrics(std::span<const double> values) {
  if (values.empty()) throw ConfigError("aggregate_metrics: no episodes to aggregate");
  MetricSummary out;
  out.count = values.size();
  double total = 0.0;
  for (double v : values) total += v;
  out.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double s = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.halfwidth = 1.96 * s / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

namespace {

std::vector<double> rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t d = t.dim(1);
  auto data = t.data();
  return {data.begin() + static_cast<std::ptrdiff_t>(begin * d), data.begin() + static_cast<std::ptrdiff_t>(end * d)};
}

void record_topk(EpisodeMetrics& out, const std::string& prefix, const Tensor& refined_scores,
                 const Tensor& initial_scores, std::span<const std::size_t> labels, std::span<const std::size_t> topk) {
  for (std::size_t k : topk) {
    const std::string key = prefix + "_top" + std::to_string(k);
    out[key] = topk_accuracy(refined_scores, labels, k);
    out[key + "_initial"] = topk_accuracy(initial_scores, labels, k);
  }
}

std::string describe(const EvalConfig& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "shots=%zu ways=%s queries=%zu episodes=%zu epsilon=%.17g include_base=%d split=%s holdout=%.17g seed=%llu",
                c.shots, c.ways ? std::to_string(*c.ways).c_str() : "all", c.queries_per_class, c.episodes, c.epsilon,
                c.include_base ? 1 : 0, std::string(to_string(c.split)).c_str(), c.holdout_fraction,
                static_cast<unsigned long long>(c.seed));
  std::string s = buf;
  s += " topk=";
  for (std::size_t k : c.topk) s += std::to_string(k) + ",";
  return s;
}

}  // namespace

EpisodeMetrics run_episode(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                           const WdaeModel& model, const EvalConfig& config, std::size_t episode_index) {
  const std::size_t d = dataset.dim;
  if (base_weights.dim != d || model.config().dim != d) {
    throw ShapeError("eval: dataset, base weights and model disagree on the feature dimension");
  }
  const auto pool = dataset.classes_in(config.split);
  const std::size_t ways = config.ways.value_or(pool.size());
  if (pool.empty() || ways > pool.size()) {
    throw SamplingError("eval: " + std::to_string(ways) + "-way episodes need that many " +
                        std::string(to_string(config.split)) + " classes, found " + std::to_string(pool.size()));
  }

  Rng rng(derive_seed(config.seed, episode_index));
  const auto chosen = rng.sample_without_replacement(pool.size(), ways);
  std::vector<NovelExamples> shots;
  std::vector<double> novel_queries;
  std::vector<std::size_t> novel_labels;
  const std::size_t need = config.shots + config.queries_per_class;
  for (std::size_t w = 0; w < ways; ++w) {
    const std::size_t c = pool[chosen[w]];
    const std::size_t n = dataset.num_examples(c);
    if (n < need) {
      throw SamplingError("eval: class " + std::to_string(dataset.classes[c].class_id) + " has " + std::to_string(n) +
                          " examples, " + std::to_string(need) + " needed for shots plus queries");
    }
    const auto picks = rng.sample_without_replacement(n, need);
    NovelExamples ex{dataset.classes[c].class_id, {}};
    for (std::size_t i = 0; i < config.shots; ++i) {
      auto v = dataset.example(c, picks[i]);
      ex.values.insert(ex.values.end(), v.begin(), v.end());
    }
    for (std::size_t i = config.shots; i < need; ++i) {
      auto v = dataset.example(c, picks[i]);
      novel_queries.insert(novel_queries.end(), v.begin(), v.end());
      novel_labels.push_back(w);
    }
    shots.push_back(std::move(ex));
  }

  const ClassifierWeights initial = initial_estimate(shots, base_weights);
  const std::size_t n_base = base_weights.num_classes();
  const std::size_t n_all = initial.num_classes();
  std::optional<ClassGraph> graph;
  if (model.config().variant == Variant::gnn) {
    graph = build_graph(initial.rows, d, model.config().neighbors, model.config().inverse_temperature);
  }
  const Tensor w0 = initial.as_tensor();
  const Tensor refined = refine(w0, graph ? &*graph : nullptr, model, config.epsilon);

  EpisodeMetrics out;
  const Tensor q = Tensor::from({novel_labels.size(), d}, novel_queries);
  const Tensor refined_novel = Tensor::from({ways, d}, rows_of(refined, n_base, n_all));
  const Tensor initial_novel = Tensor::from({ways, d}, rows_of(w0, n_base, n_all));
  record_topk(out, "novel", cosine_scores(q, refined_novel, base_weights.scale),
              cosine_scores(q, initial_novel, base_weights.scale), novel_labels, config.topk);

  if (config.include_base) {
    std::vector<double> all_queries;
    std::vector<std::size_t> all_labels;
    for (std::size_t b = 0; b < n_base; ++b) {
      const std::size_t c = dataset.index_of(base_weights.class_ids[b]);
      const std::size_t n = dataset.num_examples(c);
      const std::size_t first = training_count(n, config.holdout_fraction);
      if (first >= n) {
        throw SamplingError("eval: base class " + std::to_string(base_weights.class_ids[b]) +
                            " has no held-out examples for base queries");
      }
      const auto picks = rng.sample_without_replacement(n - first, config.queries_per_class);
      for (std::size_t p : picks) {
        auto v = dataset.example(c, first + p);
        all_queries.insert(all_queries.end(), v.begin(), v.end());
        all_labels.push_back(b);
      }
    }
    all_queries.insert(all_queries.end(), novel_queries.begin(), novel_queries.end());
    for (std::size_t y : novel_labels) all_labels.push_back(n_base + y);
    const Tensor qa = Tensor::from({all_labels.size(), d}, std::move(all_queries));
    record_topk(out, "all", cosine_scores(qa, refined, base_weights.scale), cosine_scores(qa, w0, base_weights.scale),
                all_labels, config.topk);
  }
  return out;
}

EvalReport run_eval(const FeatureDataset& dataset, const ClassifierWeights& base_weights, const WdaeModel& model,
                    const EvalConfig& config) {
  config.validate();
  const std::size_t pool = dataset.classes_in(config.split).size();
  const std::size_t ways = config.ways.value_or(pool);
  for (std::size_t k : config.topk) {
    if (k > ways) {
      throw ConfigError("eval: top-" + std::to_string(k) + " accuracy needs at least " + std::to_string(k) + " ways");
    }
  }

  EvalReport report;
  report.episodes.resize(config.episodes);
  const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, config.episodes));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < config.episodes; i = next++) {
      try {
        report.episodes[i] = run_episode(dataset, base_weights, model, config, i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = config.episodes;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> values(config.episodes);
  for (const auto& [key, unused] : report.episodes.front()) {
    for (std::size_t i = 0; i < config.episodes; ++i) values[i] = report.episodes[i].at(key);
    report.metrics[key] = aggregate_metrics(values);
    const auto base_key = key.substr(0, key.size() - std::string_view("_initial").size());
    if (key.ends_with("_initial") && report.episodes.front().count(base_key)) {
      for (std::size_t i = 0; i < config.episodes; ++i) {
        values[i] = report.episodes[i].at(base_key) - report.episodes[i].at(key);
      }
      report.metrics[base_key + "_gain"] = aggregate_metrics(values);
    }
  }
  if (config.episodes == 1) report.warnings.push_back("single episode: confidence half-widths reported as 0");

  Fnv1a h;
  h.update(describe(config));
  report.config_digest = h.hex();
  return report;
}

void write_report_table(std::ostream& out, const EvalReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s %9s\n", "metric", "mean", "ci95", "episodes");
  out << buf;
  for (const auto& [key, m] : report.metrics) {
    std::snprintf(buf, sizeof buf, "%-24s %10.4f %10.4f %9zu\n", key.c_str(), m.mean, m.halfwidth, m.count);
    out << buf;
  }
}

void write_report_kv(std::ostream& out, const EvalReport& report) {
  char buf[64];
  for (const auto& [key, m] : report.metrics) {
    std::snprintf(buf, sizeof buf, "%.17g", m.mean);
    out << key << ".mean=" << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", m.halfwidth);
    out << key << ".ci95=" << buf << '\n';
    out << key << ".episodes=" << m.count << '\n';
  }
  out << "config_digest=" << report.config_digest << '\n';
}

void write_episode_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "episode";
  if (!report.episodes.empty()) {
    for (const auto& [key, unused] : report.episodes.front()) out << ',' << key;
  }
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < report.episodes.size(); ++i) {
    out << i;
    for (const auto& [key, v] : report.episodes[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace wdae
