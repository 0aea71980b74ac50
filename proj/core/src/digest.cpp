#include "wdae/digest.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "wdae/errors.hpp"

namespace wdae {

void Fnv1a::update(std::span<const unsigned char> bytes) noexcept {
  for (unsigned char b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) noexcept {
  update(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string digest_files(const std::filesystem::path& dir, std::initializer_list<std::string_view> names) {
  Fnv1a h;
  for (std::string_view name : names) {
    const auto path = dir / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadErrorKind::missing_file, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h.update(name);
    h.update(bytes);
  }
  return h.hex();
}

}  // namespace wdae
