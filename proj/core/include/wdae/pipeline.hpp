#pragma once

// Glue shared by the command-line tool and the end-to-end checks: artifact
// digests for stage chaining and the ablation matrix.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "wdae/config.hpp"

namespace wdae {

std::string dataset_digest(const std::filesystem::path& dir);
std::string weights_digest(const std::filesystem::path& dir);

/// Throws ConfigError when `meta[key]` disagrees with `actual`.
void require_digest(const Meta& meta, const std::string& key, const std::string& actual, const std::string& what);

struct AblationRow {
  std::string name;
  std::vector<double> per_seed;  // mean novel top-1 per master seed
  std::vector<double> per_seed_halfwidth;
  double mean = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  std::string config_digest;

  [[nodiscard]] const AblationRow& row(const std::string& name) const;
};

/// Row names in report order.
const std::vector<std::string>& ablation_rows();

/// Trains every variant of the matrix for `ablate_seeds` master seeds
/// (seed, seed+1, ...) and scores each on the eval settings of `config`.
/// "Initial estimates" is the default model evaluated with a zero step.
AblationReport run_ablation(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                            const RunConfig& config, std::size_t jobs,
                            const std::function<void(const std::string&)>& progress = {});

void write_ablation_table(std::ostream& out, const AblationReport& report);

}  // namespace wdae
