#pragma once

// Typed key=value run configuration: a named preset, optionally overridden by
// a config file and then by individual settings. Every key is known up front;
// values are validated and stored in canonical text form so the digest only
// moves when an effective value does.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wdae/classifier.hpp"
#include "wdae/evaluator.hpp"
#include "wdae/features.hpp"
#include "wdae/trainer.hpp"
#include "wdae/wdae_model.hpp"

namespace wdae {

enum class ValueKind { count, real, flag, text };

struct KeySpec {
  std::string name;
  ValueKind kind;
  std::string help;
};

const std::vector<KeySpec>& config_keys();
const std::vector<std::string>& preset_names();

class RunConfig {
 public:
  /// Throws ConfigError for an unknown preset.
  static RunConfig preset(std::string_view name = "synthetic");

  void set(std::string_view key, std::string_view value);
  /// `key = value` lines; `#` starts a comment; blank lines are ignored.
  void load_file(const std::filesystem::path& path);

  [[nodiscard]] const std::string& preset_name() const { return preset_; }
  [[nodiscard]] bool has(std::string_view key) const;
  /// Throws ConfigError naming the preset when the key has no value.
  [[nodiscard]] const std::string& get(std::string_view key) const;
  [[nodiscard]] std::size_t get_count(std::string_view key) const;
  [[nodiscard]] std::uint64_t get_u64(std::string_view key) const;
  [[nodiscard]] double get_real(std::string_view key) const;
  [[nodiscard]] bool get_flag(std::string_view key) const;

  /// Sorted `key=value` lines, unset keys as `key=<unset>`.
  [[nodiscard]] std::string canonical() const;
  [[nodiscard]] std::string digest() const;

  [[nodiscard]] SyntheticConfig synthetic() const;
  [[nodiscard]] PretrainConfig pretrain() const;
  [[nodiscard]] ModelConfig model(std::size_t dim) const;
  [[nodiscard]] EpisodeConfig episode() const;
  [[nodiscard]] TrainConfig train() const;
  [[nodiscard]] EvalConfig eval() const;

  /// `epsilon` if set explicitly, otherwise the preset's per-shot table.
  [[nodiscard]] double epsilon_for(std::size_t shots) const;

 private:
  std::string preset_;
  std::map<std::string, std::optional<std::string>, std::less<>> values_;
  std::map<std::size_t, double> epsilon_table_;
};

/// Canonical form of `value` for `key`, or ConfigError.
std::string canonicalize(std::string_view key, std::string_view value);

}  // namespace wdae
