#include "wdae/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "wdae/digest.hpp"
#include "wdae/errors.hpp"

namespace wdae {

std::string dataset_digest(const std::filesystem::path& dir) {
  return digest_files(dir, {"features.bin", "labels.bin", "splits.txt"});
}

std::string weights_digest(const std::filesystem::path& dir) { return digest_files(dir, {"weights.bin", "classes.bin"}); }

void require_digest(const Meta& meta, const std::string& key, const std::string& actual, const std::string& what) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ConfigError(what + " carries no " + key + "; cannot verify the stage chain");
  if (it->second != actual) {
    throw ConfigError(what + " was produced from a different input (" + key + " " + it->second + ", found " + actual +
                      ")");
  }
}

const AblationRow& AblationReport::row(const std::string& name) const {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name == name; });
  if (it == rows.end()) throw ConfigError("no ablation row named \"" + name + "\"");
  return *it;
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows{"Initial estimates",      "wDAE-GNN",     "No Noise",
                                             "Noisy Targets as Input", "No Cls. Loss", "No Rec. Loss",
                                             "wDAE-MLP"};
  return rows;
}

AblationReport run_ablation(const FeatureDataset& dataset, const ClassifierWeights& base_weights,
                            const RunConfig& config, std::size_t jobs,
                            const std::function<void(const std::string&)>& progress) {
  AblationReport report;
  report.config_digest = config.digest();
  for (const auto& name : ablation_rows()) report.rows.push_back({name, {}, {}, 0.0});
  const std::uint64_t first = config.get_u64("seed");
  const std::size_t seeds = config.get_count("ablate_seeds");
  if (seeds == 0) throw ConfigError("ablate_seeds must be positive");

  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = first + s;
    report.seeds.push_back(seed);
    RunConfig base = config;
    base.set("seed", std::to_string(seed));
    base.set("variant", "gnn");
    for (const char* flag : {"no_noise", "noisy_targets_as_input", "no_cls_loss", "no_rec_loss"}) base.set(flag, "false");

    EvalConfig ec = base.eval();
    ec.jobs = jobs;
    auto record = [&](const std::string& name, const EvalReport& r, const char* metric) {
      for (auto& row : report.rows) {
        if (row.name != name) continue;
        row.per_seed.push_back(r.metrics.at(metric).mean);
        row.per_seed_halfwidth.push_back(r.metrics.at(metric).halfwidth);
      }
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed=%llu row=\"%s\" novel_top1=%.4f", static_cast<unsigned long long>(seed),
                      name.c_str(), r.metrics.at(metric).mean);
        progress(buf);
      }
    };

    for (const auto& name : ablation_rows()) {
      if (name == "Initial estimates") continue;
      RunConfig rc = base;
      if (name == "No Noise") rc.set("no_noise", "true");
      if (name == "Noisy Targets as Input") rc.set("noisy_targets_as_input", "true");
      if (name == "No Cls. Loss") rc.set("no_cls_loss", "true");
      if (name == "No Rec. Loss") rc.set("no_rec_loss", "true");
      if (name == "wDAE-MLP") rc.set("variant", "mlp");
      const TrainResult trained =
          train(dataset, base_weights, rc.model(dataset.dim), rc.episode(), rc.train());
      const EvalReport r = run_eval(dataset, base_weights, trained.model, ec);
      record(name, r, "novel_top1");
      if (name == "wDAE-GNN") {
        EvalConfig zero = ec;
        zero.epsilon = 0.0;
        record("Initial estimates", run_eval(dataset, base_weights, trained.model, zero), "novel_top1");
      }
    }
  }
  for (auto& row : report.rows) {
    double total = 0.0;
    for (double v : row.per_seed) total += v;
    row.mean = total / static_cast<double>(row.per_seed.size());
  }
  return report;
}

void write_ablation_table(std::ostream& out, const AblationReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-24s %9s", "model", "mean");
  out << buf;
  for (auto seed : report.seeds) {
    std::snprintf(buf, sizeof buf, " %17s", ("seed " + std::to_string(seed)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-24s %9.4f", row.name.c_str(), row.mean);
    out << buf;
    for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
      std::snprintf(buf, sizeof buf, "  %7.4f +- %6.4f", row.per_seed[i], row.per_seed_halfwidth[i]);
      out << buf;
    }
    out << '\n';
  }
  out << "config_digest=" << report.config_digest << '\n';
}

}  // namespace wdae
