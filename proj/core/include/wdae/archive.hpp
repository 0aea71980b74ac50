#pragma once

// On-disk building blocks shared by datasets, classifier weights and model
// checkpoints. All integers are u32 little-endian, all payloads float32
// little-endian; values are widened to double on read.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace wdae {

inline constexpr char kMatrixMagic[4] = {'W', 'D', 'A', 'E'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct MatrixFile {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<double> values;  // rows * dim, row-major
};

/// "WDAE", u32 version, u32 rows, u32 dim, rows*dim float32.
void write_matrix_file(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t dim,
                       std::span<const double> values);
MatrixFile read_matrix_file(const std::filesystem::path& path);

/// u32 version, u32 count, count u32 ids.
void write_id_file(const std::filesystem::path& path, std::span<const std::uint32_t> ids);
std::vector<std::uint32_t> read_id_file(const std::filesystem::path& path);

using Meta = std::map<std::string, std::string>;

/// Plain `key=value` lines, sorted by key.
void write_meta(const std::filesystem::path& path, const Meta& meta);
Meta read_meta(const std::filesystem::path& path);
const std::string& meta_value(const Meta& meta, const std::string& key, const std::filesystem::path& source);

// Little-endian primitives (exposed for the checkpoint writer and tests).
void append_u32(std::string& out, std::uint32_t value);
void append_f32(std::string& out, double value);

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source);

  std::uint32_t u32();
  double f32();
  std::string take(std::size_t count, const char* what);
  /// Throws a truncation error naming expected vs actual byte counts.
  void require(std::size_t count, const char* what) const;
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
  [[nodiscard]] std::size_t size() const { return bytes_.size(); }
  [[nodiscard]] std::size_t position() const { return pos_; }
  [[nodiscard]] const std::string& source() const { return source_; }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

ByteReader open_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace wdae
