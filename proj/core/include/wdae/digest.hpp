#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace wdae {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes) noexcept;
  void update(std::string_view text) noexcept;
  [[nodiscard]] std::uint64_t value() const noexcept { return state_; }
  [[nodiscard]] std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

/// Digest over the named files' bytes, in order. Missing files are errors.
std::string digest_files(const std::filesystem::path& dir, std::initializer_list<std::string_view> names);

}  // namespace wdae
