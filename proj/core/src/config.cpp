#include "wdae/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "wdae/digest.hpp"
#include "wdae/errors.hpp"

namespace wdae {

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys{
      {"seed", ValueKind::count, "master seed"},
      {"classes", ValueKind::count, "synthetic class count (1/3 base, 1/6 novel_val, rest novel_test)"},
      {"dim", ValueKind::count, "synthetic feature dimension"},
      {"spread", ValueKind::real, "synthetic within-class standard deviation"},
      {"examples_per_class", ValueKind::count, "synthetic examples per class"},
      {"pretrain_epochs", ValueKind::count, "base classifier epochs"},
      {"pretrain_batch", ValueKind::count, "base classifier minibatch size"},
      {"pretrain_lr", ValueKind::real, "base classifier learning rate"},
      {"scale", ValueKind::real, "cosine score multiplier"},
      {"holdout", ValueKind::real, "fraction of each base class held out of training"},
      {"variant", ValueKind::text, "gnn or mlp"},
      {"hidden_width", ValueKind::count, "channels of the message and hidden update functions"},
      {"dropout", ValueKind::real, "drop probability of every dropout unit"},
      {"leaky_slope", ValueKind::real, "LeakyReLU negative slope"},
      {"neighbors", ValueKind::count, "class graph neighbours per node"},
      {"inverse_temperature", ValueKind::real, "edge-strength softmax inverse temperature"},
      {"epochs", ValueKind::count, "denoiser training epochs"},
      {"episodes_per_epoch", ValueKind::count, "training episodes per epoch"},
      {"lr", ValueKind::real, "denoiser learning rate"},
      {"momentum", ValueKind::real, "SGD momentum"},
      {"weight_decay", ValueKind::real, "SGD weight decay"},
      {"lr_drop_at", ValueKind::real, "fraction of epochs after which lr drops"},
      {"lr_drop", ValueKind::real, "learning-rate multiplier applied at the drop"},
      {"accumulation", ValueKind::count, "episodes per optimizer step"},
      {"num_fake_novel", ValueKind::count, "fake-novel classes per training episode"},
      {"train_shots", ValueKind::count, "shots per fake-novel class"},
      {"num_validation", ValueKind::count, "validation examples per training episode"},
      {"noise_sigma", ValueKind::real, "standard deviation of the input noise"},
      {"stratified", ValueKind::flag, "spread validation examples evenly over classes"},
      {"rec_weight", ValueKind::real, "weight of the reconstruction term"},
      {"cls_weight", ValueKind::real, "weight of the classification term"},
      {"no_noise", ValueKind::flag, "ablation: train without input noise"},
      {"noisy_targets_as_input", ValueKind::flag, "ablation: feed noisy targets instead of estimates"},
      {"no_cls_loss", ValueKind::flag, "ablation: drop the classification term"},
      {"no_rec_loss", ValueKind::flag, "ablation: drop the reconstruction term"},
      {"validation_episodes", ValueKind::count, "novel_val episodes scored after each epoch"},
      {"shots", ValueKind::count, "test shots per novel class"},
      {"ways", ValueKind::text, "novel classes per test episode, or all"},
      {"queries", ValueKind::count, "test queries per class"},
      {"eval_episodes", ValueKind::count, "test episodes"},
      {"epsilon", ValueKind::text, "refinement step size, or auto for the preset table"},
      {"topk", ValueKind::text, "comma-separated top-k list"},
      {"include_base", ValueKind::flag, "also score base classes in a unified label space"},
      {"eval_split", ValueKind::text, "split the novel test classes come from"},
      {"ablate_seeds", ValueKind::count, "master seeds averaged by ablate"},
  };
  return keys;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"synthetic", "miniimagenet", "imagenet-fs"};
  return names;
}

namespace {

const KeySpec& spec_for(std::string_view key) {
  const auto& keys = config_keys();
  auto it = std::find_if(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.name == key; });
  if (it == keys.end()) throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  return *it;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got \"" + std::string(text) + "\"");
  }
  return v;
}

double parse_real(std::string_view key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got \"" + s + "\"");
  }
  return v;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string canonicalize(std::string_view key, std::string_view raw) {
  const KeySpec& spec = spec_for(key);
  const std::string value = trim(raw);
  switch (spec.kind) {
    case ValueKind::count:
      return std::to_string(parse_u64(key, value));
    case ValueKind::real:
      return format_real(parse_real(key, value));
    case ValueKind::flag:
      if (value == "true" || value == "1" || value == "yes" || value == "on") return "true";
      if (value == "false" || value == "0" || value == "no" || value == "off") return "false";
      throw ConfigError(std::string(key) + ": expected true or false, got \"" + value + "\"");
    case ValueKind::text:
      break;
  }
  if (key == "variant") return std::string(to_string(parse_variant(value)));
  if (key == "eval_split") return std::string(to_string(parse_split(value)));
  if (key == "ways") {
    if (value == "all") return value;
    const auto n = parse_u64(key, value);
    if (n == 0) throw ConfigError("ways: must be positive or \"all\"");
    return std::to_string(n);
  }
  if (key == "epsilon") {
    if (value == "auto") return value;
    const double eps = parse_real(key, value);
    if (eps < 0.0) throw ConfigError("epsilon: must be >= 0");
    return format_real(eps);
  }
  if (key == "topk") {
    std::vector<std::uint64_t> ks;
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto k = parse_u64(key, trim(item));
      if (k == 0) throw ConfigError("topk: entries must be positive");
      ks.push_back(k);
    }
    if (ks.empty()) throw ConfigError("topk: empty list");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    std::string out;
    for (auto k : ks) out += (out.empty() ? "" : ",") + std::to_string(k);
    return out;
  }
  return value;
}

RunConfig RunConfig::preset(std::string_view name) {
  RunConfig c;
  c.preset_ = std::string(name);
  auto put = [&](const char* key, const char* value) { c.values_[key] = canonicalize(key, value); };
  for (const KeySpec& k : config_keys()) c.values_[k.name] = std::nullopt;

  // Shared defaults.
  put("seed", "0");
  put("classes", "60");
  put("dim", "32");
  put("spread", "0.1");
  put("examples_per_class", "60");
  put("pretrain_epochs", "20");
  put("pretrain_batch", "64");
  put("pretrain_lr", "0.1");
  put("scale", "10");
  put("holdout", "0.2");
  put("variant", "gnn");
  put("leaky_slope", "0.2");
  put("neighbors", "10");
  put("inverse_temperature", "5");
  put("epochs", "30");
  put("episodes_per_epoch", "100");
  put("lr", "0.1");
  put("momentum", "0.9");
  put("weight_decay", "5e-4");
  put("lr_drop_at", "0.6666666666666666");
  put("lr_drop", "0.1");
  put("accumulation", "1");
  put("train_shots", "1");
  put("stratified", "true");
  put("rec_weight", "1");
  put("cls_weight", "1");
  put("no_noise", "false");
  put("noisy_targets_as_input", "false");
  put("no_cls_loss", "false");
  put("no_rec_loss", "false");
  put("validation_episodes", "0");
  put("shots", "1");
  put("queries", "15");
  put("epsilon", "auto");
  put("eval_split", "novel_test");
  put("ablate_seeds", "5");

  if (name == "synthetic") {
    put("hidden_width", "256");
    put("dropout", "0.93");
    put("noise_sigma", "0.1");
    put("num_fake_novel", "5");
    put("num_validation", "15");
    put("ways", "20");
    put("eval_episodes", "500");
    put("topk", "1");
    put("include_base", "false");
    c.epsilon_table_ = {{1, 1.0}, {5, 0.5}};
  } else if (name == "miniimagenet") {
    put("hidden_width", "320");
    put("dropout", "0.95");
    put("noise_sigma", "0.1");
    put("num_fake_novel", "5");
    put("num_validation", "15");
    put("ways", "5");
    put("eval_episodes", "20000");
    put("topk", "1");
    put("include_base", "false");
    c.epsilon_table_ = {{1, 1.0}, {5, 0.5}};
  } else if (name == "imagenet-fs") {
    // num_fake_novel and num_validation stay unset: they must be given.
    put("hidden_width", "1024");
    put("dropout", "0.7");
    put("noise_sigma", "0.08");
    put("ways", "all");
    put("eval_episodes", "100");
    put("topk", "1,5");
    put("include_base", "true");
    c.epsilon_table_ = {{1, 1.0}, {2, 1.0}, {5, 0.6}, {10, 0.4}, {20, 0.2}};
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += " " + n;
    throw ConfigError("unknown preset \"" + std::string(name) + "\" (known:" + known + ")");
  }
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  it->second = canonicalize(key, value);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    try {
      set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

bool RunConfig::has(std::string_view key) const {
  auto it = values_.find(key);
  return it != values_.end() && it->second.has_value();
}

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  if (!it->second) {
    throw ConfigError("preset \"" + preset_ + "\" has no default for " + std::string(key) + "; set it explicitly");
  }
  return *it->second;
}

std::size_t RunConfig::get_count(std::string_view key) const { return parse_u64(key, get(key)); }
std::uint64_t RunConfig::get_u64(std::string_view key) const { return parse_u64(key, get(key)); }
double RunConfig::get_real(std::string_view key) const { return parse_real(key, get(key)); }
bool RunConfig::get_flag(std::string_view key) const { return get(key) == "true"; }

std::string RunConfig::canonical() const {
  std::string out = "preset=" + preset_ + "\n";
  for (const auto& [key, value] : values_) out += key + "=" + value.value_or("<unset>") + "\n";
  return out;
}

std::string RunConfig::digest() const {
  Fnv1a h;
  h.update(canonical());
  return h.hex();
}

SyntheticConfig RunConfig::synthetic() const {
  const std::size_t total = get_count("classes");
  SyntheticConfig s;
  s.num_base = total / 3;
  s.num_novel_val = total / 6;
  s.num_novel_test = total - s.num_base - s.num_novel_val;
  if (s.num_base < 2 || s.num_novel_val < 1) {
    throw ConfigError("classes: need at least 6 classes to fill every split, got " + std::to_string(total));
  }
  s.dim = get_count("dim");
  s.examples_per_class = get_count("examples_per_class");
  s.cluster_spread = get_real("spread");
  s.seed = get_u64("seed");
  s.validate();
  return s;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.epochs = get_count("pretrain_epochs");
  p.batch_size = get_count("pretrain_batch");
  p.lr = get_real("pretrain_lr");
  p.momentum = get_real("momentum");
  p.weight_decay = get_real("weight_decay");
  p.scale = get_real("scale");
  p.holdout_fraction = get_real("holdout");
  p.seed = get_u64("seed");
  return p;
}

ModelConfig RunConfig::model(std::size_t dim) const {
  ModelConfig m;
  m.variant = parse_variant(get("variant"));
  m.dim = dim;
  m.hidden_width = get_count("hidden_width");
  m.dropout = get_real("dropout");
  m.leaky_slope = get_real("leaky_slope");
  m.neighbors = get_count("neighbors");
  m.inverse_temperature = get_real("inverse_temperature");
  m.validate();
  return m;
}

EpisodeConfig RunConfig::episode() const {
  EpisodeConfig e;
  e.num_fake_novel = get_count("num_fake_novel");
  e.shots = get_count("train_shots");
  e.num_validation = get_count("num_validation");
  e.noise_sigma = get_real("noise_sigma");
  e.stratified = get_flag("stratified");
  e.holdout_fraction = get_real("holdout");
  e.validate();
  return e;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = get_count("epochs");
  t.episodes_per_epoch = get_count("episodes_per_epoch");
  t.lr = get_real("lr");
  t.momentum = get_real("momentum");
  t.weight_decay = get_real("weight_decay");
  t.lr_drop_at = get_real("lr_drop_at");
  t.lr_drop = get_real("lr_drop");
  t.accumulation = get_count("accumulation");
  t.rec_weight = get_real("rec_weight");
  t.cls_weight = get_real("cls_weight");
  t.ablation = {get_flag("no_noise"), get_flag("noisy_targets_as_input"), get_flag("no_cls_loss"),
                get_flag("no_rec_loss")};
  t.scale = get_real("scale");
  t.validation_episodes = get_count("validation_episodes");
  t.seed = get_u64("seed");
  t.validate();
  return t;
}

double RunConfig::epsilon_for(std::size_t shots) const {
  const std::string& eps = get("epsilon");
  if (eps != "auto") return parse_real("epsilon", eps);
  auto it = epsilon_table_.find(shots);
  if (it == epsilon_table_.end()) {
    throw ConfigError("preset \"" + preset_ + "\" has no step size for " + std::to_string(shots) +
                      "-shot evaluation; set epsilon explicitly");
  }
  return it->second;
}

EvalConfig RunConfig::eval() const {
  EvalConfig e;
  e.shots = get_count("shots");
  if (get("ways") != "all") e.ways = get_count("ways");
  e.queries_per_class = get_count("queries");
  e.episodes = get_count("eval_episodes");
  e.epsilon = epsilon_for(e.shots);
  e.topk.clear();
  std::stringstream in(get("topk"));
  std::string item;
  while (std::getline(in, item, ',')) e.topk.push_back(parse_u64("topk", item));
  e.include_base = get_flag("include_base");
  e.split = parse_split(get("eval_split"));
  e.holdout_fraction = get_real("holdout");
  e.seed = get_u64("seed");
  e.validate();
  return e;
}

}  // namespace wdae
