// wdae: synth -> pretrain -> train -> eval, plus ablate and gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "wdae/class_graph.hpp"
#include "wdae/classifier.hpp"
#include "wdae/config.hpp"
#include "wdae/errors.hpp"
#include "wdae/evaluator.hpp"
#include "wdae/features.hpp"
#include "wdae/gradcheck.hpp"
#include "wdae/pipeline.hpp"
#include "wdae/trainer.hpp"
#include "wdae/wdae_model.hpp"

namespace fs = std::filesystem;
using namespace wdae;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

struct Options {
  std::string preset = "synthetic";
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> raw value
  std::size_t jobs = 0;
  std::string out, data, weights, model, emit_csv, dump_graph, op;
  bool verbose = false;
};

RunConfig resolve(const Options& o) {
  try {
    RunConfig c = RunConfig::preset(o.preset);
    if (!o.config_file.empty()) c.load_file(o.config_file);
    for (const auto& s : o.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + s + "\"");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : o.flags) c.set(key, value);
    return c;
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

std::size_t jobs_of(const Options& o) {
  if (o.jobs > 0) return o.jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

Meta stage_meta(const RunConfig& c, const char* stage) {
  return {{"stage", stage}, {"preset", c.preset_name()}, {"config_digest", c.digest()}, {"seed", c.get("seed")}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

int cmd_synth(const Options& o) {
  const RunConfig c = resolve(o);
  require_path(o.out, "--out");
  const FeatureDataset ds = generate_synthetic(c.synthetic());
  save_features(ds, o.out);
  write_meta(fs::path(o.out) / "meta.txt", stage_meta(c, "synth"));
  std::printf("wrote %zu classes (dim %zu) to %s\ndataset_digest=%s\n", ds.classes.size(), ds.dim, o.out.c_str(),
              dataset_digest(o.out).c_str());
  return 0;
}

int cmd_pretrain(const Options& o) {
  const RunConfig c = resolve(o);
  require_path(o.data, "--data");
  require_path(o.out, "--out");
  const FeatureDataset ds = load_features(o.data);
  const ClassifierWeights w = pretrain_base(ds, c.pretrain());
  Meta meta = stage_meta(c, "pretrain");
  meta["dataset_digest"] = dataset_digest(o.data);
  save_weights(w, o.out, meta);

  // Accuracy on the held-out base examples, as a sanity figure.
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  const double holdout = c.get_real("holdout");
  for (std::size_t r = 0; r < w.num_classes(); ++r) {
    const std::size_t ci = ds.index_of(w.class_ids[r]);
    const std::size_t n = ds.num_examples(ci);
    for (std::size_t e = training_count(n, holdout); e < n; ++e) {
      auto v = ds.example(ci, e);
      feats.insert(feats.end(), v.begin(), v.end());
      labels.push_back(r);
    }
  }
  std::printf("pretrained %zu base classes\n", w.num_classes());
  if (!labels.empty()) {
    const Tensor s = score(Tensor::from({labels.size(), ds.dim}, feats), w);
    std::printf("heldout_base_top1=%.6f\n", topk_accuracy(s, labels, 1));
  }
  std::printf("weights_digest=%s\n", weights_digest(o.out).c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  require_path(o.data, "--data");
  require_path(o.weights, "--weights");
  require_path(o.out, "--out");
  const FeatureDataset ds = load_features(o.data);
  const std::string data_digest = dataset_digest(o.data);
  require_digest(read_meta(fs::path(o.weights) / "meta.txt"), "dataset_digest", data_digest, "base weights");
  const ClassifierWeights w = load_weights(o.weights);

  fs::create_directories(o.out);
  std::ofstream log(fs::path(o.out) / "train.log", std::ios::binary);
  if (!log) throw IoError("cannot write " + (fs::path(o.out) / "train.log").string());
  const TrainResult r = train(ds, w, c.model(ds.dim), c.episode(), c.train(), [&](const std::string& line) {
    log << line << '\n';
    if (o.verbose || line.find("mean_loss=") != std::string::npos) std::printf("%s\n", line.c_str());
  });
  Meta meta = stage_meta(c, "train");
  meta["dataset_digest"] = data_digest;
  meta["weights_digest"] = weights_digest(o.weights);
  save_model(r.model, o.out, meta);
  std::printf("saved %s model with %zu parameters to %s\n", std::string(to_string(r.model.config().variant)).c_str(),
              r.model.parameter_count(), o.out.c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve(o);
  require_path(o.data, "--data");
  require_path(o.weights, "--weights");
  require_path(o.model, "--model");
  const FeatureDataset ds = load_features(o.data);
  const std::string data_digest = dataset_digest(o.data);
  require_digest(read_meta(fs::path(o.weights) / "meta.txt"), "dataset_digest", data_digest, "base weights");
  Meta model_meta;
  const WdaeModel model = load_model(o.model, &model_meta);
  require_digest(model_meta, "weights_digest", weights_digest(o.weights), "model");
  require_digest(model_meta, "dataset_digest", data_digest, "model");
  const ClassifierWeights w = load_weights(o.weights);

  EvalConfig ec = c.eval();
  ec.jobs = jobs_of(o);
  if (!o.dump_graph.empty()) {
    // Graph of the base classes' pretrained rows, as used for every episode's base part.
    std::ofstream g(o.dump_graph);
    if (!g) throw IoError("cannot write " + o.dump_graph);
    build_graph(w.rows, w.dim, model.config().neighbors, model.config().inverse_temperature).dump(g);
  }
  const EvalReport r = run_eval(ds, w, model, ec);
  for (const auto& msg : r.warnings) std::fprintf(stderr, "warning: %s\n", msg.c_str());
  std::printf("%zu-shot %s-way, epsilon %.6g, %zu episodes\n", ec.shots,
              ec.ways ? std::to_string(*ec.ways).c_str() : "all", ec.epsilon, ec.episodes);
  write_report_table(std::cout, r);
  std::cout << '\n';
  write_report_kv(std::cout, r);
  std::cout << "run_config_digest=" << c.digest() << '\n';
  if (!o.emit_csv.empty()) write_episode_csv(o.emit_csv, r);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ostringstream text;
    write_report_table(text, r);
    text << '\n';
    write_report_kv(text, r);
    write_text(fs::path(o.out) / "report.txt", text.str());
    write_meta(fs::path(o.out) / "meta.txt", stage_meta(c, "eval"));
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig c = resolve(o);
  require_path(o.data, "--data");
  require_path(o.weights, "--weights");
  const FeatureDataset ds = load_features(o.data);
  require_digest(read_meta(fs::path(o.weights) / "meta.txt"), "dataset_digest", dataset_digest(o.data), "base weights");
  const ClassifierWeights w = load_weights(o.weights);
  const AblationReport r = run_ablation(ds, w, c, jobs_of(o), [](const std::string& line) {
    std::fprintf(stderr, "%s\n", line.c_str());
  });
  write_ablation_table(std::cout, r);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ostringstream text;
    write_ablation_table(text, r);
    write_text(fs::path(o.out) / "ablation.txt", text.str());
    write_meta(fs::path(o.out) / "meta.txt", stage_meta(c, "ablate"));
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig c = resolve(o);
  std::optional<std::string> only;
  if (!o.op.empty()) only = o.op;
  std::vector<GradcheckResult> results;
  try {
    results = run_gradcheck(c.get_u64("seed"), only);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-18s cases=%zu max_rel_error=%.3e %s\n", r.op.c_str(), r.cases, r.max_rel_error,
                r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising-autoencoder weight generation for few-shot classification"};
  app.require_subcommand(1);
  Options o;

  app.add_option("--preset", o.preset, "synthetic, miniimagenet or imagenet-fs")->capture_default_str();
  app.add_option("--config", o.config_file, "key = value file applied on top of the preset");
  app.add_option("--set", o.sets, "key=value override (repeatable)");
  app.add_option("--jobs", o.jobs, "evaluation threads (default: all cores)");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--data", o.data, "dataset directory");
  app.add_option("--weights", o.weights, "base classifier directory");
  app.add_option("--model", o.model, "trained denoiser directory");
  app.add_option("--emit-csv", o.emit_csv, "eval: per-episode accuracies");
  app.add_option("--dump-graph", o.dump_graph, "eval: write the base-class graph as text");
  app.add_option("--op", o.op, "gradcheck: check a single op");
  app.add_flag("--verbose", o.verbose, "train: echo every episode line");
  for (const KeySpec& k : config_keys()) {
    app.add_option_function<std::string>(
        "--" + dashed(k.name), [&o, name = k.name](const std::string& v) { o.flags[name] = v; }, k.help);
  }

  std::map<std::string, int (*)(const Options&)> commands{
      {"synth", cmd_synth},   {"pretrain", cmd_pretrain}, {"train", cmd_train},
      {"eval", cmd_eval},     {"ablate", cmd_ablate},     {"gradcheck", cmd_gradcheck},
  };
  std::map<std::string, std::string> blurbs{
      {"synth", "generate a synthetic feature dataset"},
      {"pretrain", "train the base cosine classifier"},
      {"train", "train the weight denoiser episodically"},
      {"eval", "run K-shot test episodes"},
      {"ablate", "train and evaluate the ablation matrix"},
      {"gradcheck", "finite-difference gradient checks"},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name, blurbs[name])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return commands.at(name)(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "wdae %s: %s\n", name.c_str(), e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "wdae %s: %s\n", name.c_str(), e.what());
    return kRuntimeFailure;
  }
}
