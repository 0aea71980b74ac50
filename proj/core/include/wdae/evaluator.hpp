#pragma once

// K-shot test episodes over the novel classes of one split, refined with a
// trained denoiser, scored against the initial estimates of the same episode.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wdae/classifier.hpp"
#include "wdae/features.hpp"
#include "wdae/wdae_model.hpp"

namespace wdae {

struct EvalConfig {
  std::size_t shots = 1;
  std::optional<std::size_t> ways;  // unset: every class of the split
  std::size_t queries_per_class = 15;
  std::size_t episodes = 500;
  double epsilon = 1.0;
  std::vector<std::size_t> topk{1};
  bool include_base = false;
  Split split = Split::novel_test;
  double holdout_fraction = 0.2;  // base examples past this cut serve as base queries
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const;
};

struct MetricSummary {
  double mean = 0.0;
  double halfwidth = 0.0;  // 1.96 * s / sqrt(n)
  std::size_t count = 0;
};

/// Mean and 95% half-width with the unbiased sample deviation. A single value
/// gets half-width 0 (the caller decides whether to warn).
MetricSummary aggregate_metrics(std::span<const double> values);

using EpisodeMetrics = std::map<std::string, double>;

/// Accuracies of one test episode: novel_top{k} and novel_top{k}_initial,
/// plus all_top{k} / all_top{k}_initial when base classes are included.
EpisodeMetrics run_episode(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                           const WdaeModel& model, const EvalConfig& config, std::size_t episode_index);

struct EvalReport {
  std::vector<EpisodeMetrics> episodes;  // in episode-index order
  std::map<std::string, MetricSummary> metrics;  // adds paired *_gain entries
  std::string config_digest;
  std::vector<std::string> warnings;
};

/// Episodes run on `config.jobs` threads; each one draws from its own stream
/// derived from (seed, episode index), so the report does not depend on the
/// schedule.
EvalReport run_eval(const FeatureDataset& dataset, const ClassifierWeights& base_weights, const WdaeModel& model,
                    const EvalConfig& config);

void write_report_table(std::ostream& out, const EvalReport& report);
void write_report_kv(std::ostream& out, const EvalReport& report);
void write_episode_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace wdae
