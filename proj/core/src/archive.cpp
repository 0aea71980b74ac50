#include "wdae/archive.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "wdae/errors.hpp"

namespace wdae {

void append_u32(std::string& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xffu));
}

void append_f32(std::string& out, double value) {
  append_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

ByteReader::ByteReader(std::vector<unsigned char> bytes, std::string source)
    : bytes_(std::move(bytes)), source_(std::move(source)) {}

void ByteReader::require(std::size_t count, const char* what) const {
  if (remaining() < count) {
    throw LoadError(LoadErrorKind::truncated, source_ + ": truncated while reading " + what + ", expected " +
                                                  std::to_string(pos_ + count) + " bytes, found " +
                                                  std::to_string(bytes_.size()));
  }
}

std::uint32_t ByteReader::u32() {
  require(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::string ByteReader::take(std::size_t count, const char* what) {
  require(count, what);
  std::string out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
  pos_ += count;
  return out;
}

double ByteReader::f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

ByteReader open_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::missing_file, "missing file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), path.string());
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_matrix_file(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t dim,
                       std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(rows) * dim) {
    throw ShapeError("write_matrix_file: " + std::to_string(values.size()) + " values for " + std::to_string(rows) +
                     "x" + std::to_string(dim));
  }
  std::string out;
  out.reserve(16 + values.size() * 4);
  out.append(kMatrixMagic, 4);
  append_u32(out, kFormatVersion);
  append_u32(out, rows);
  append_u32(out, dim);
  for (double v : values) append_f32(out, v);
  write_bytes(path, out);
}

MatrixFile read_matrix_file(const std::filesystem::path& path) {
  ByteReader in = open_bytes(path);
  if (in.take(4, "magic") != std::string_view(kMatrixMagic, 4)) {
    throw LoadError(LoadErrorKind::bad_magic, path.string() + ": magic mismatch, expected \"WDAE\"");
  }
  const std::uint32_t version = in.u32();
  if (version != kFormatVersion) {
    throw LoadError(LoadErrorKind::bad_version, path.string() + ": unsupported version " + std::to_string(version));
  }
  MatrixFile m;
  m.rows = in.u32();
  m.dim = in.u32();
  if (m.dim == 0) throw LoadError(LoadErrorKind::dimension_mismatch, path.string() + ": zero dimension");
  const std::size_t count = static_cast<std::size_t>(m.rows) * m.dim;
  if (in.remaining() != count * 4) {
    if (in.remaining() < count * 4) in.require(count * 4, "float32 payload");
    throw LoadError(LoadErrorKind::dimension_mismatch,
                    path.string() + ": expected " + std::to_string(in.position() + count * 4) + " bytes, found " +
                        std::to_string(in.size()));
  }
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    m.values[i] = in.f32();
    if (!std::isfinite(m.values[i])) {
      throw LoadError(LoadErrorKind::non_finite, path.string() + ": non-finite value at row " +
                                                     std::to_string(i / m.dim) + ", column " +
                                                     std::to_string(i % m.dim));
    }
  }
  return m;
}

void write_id_file(const std::filesystem::path& path, std::span<const std::uint32_t> ids) {
  std::string out;
  append_u32(out, kFormatVersion);
  append_u32(out, static_cast<std::uint32_t>(ids.size()));
  for (std::uint32_t id : ids) append_u32(out, id);
  write_bytes(path, out);
}

std::vector<std::uint32_t> read_id_file(const std::filesystem::path& path) {
  ByteReader in = open_bytes(path);
  const std::uint32_t version = in.u32();
  if (version != kFormatVersion) {
    throw LoadError(LoadErrorKind::bad_version, path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  in.require(static_cast<std::size_t>(count) * 4, "ids");
  if (in.remaining() != static_cast<std::size_t>(count) * 4) {
    throw LoadError(LoadErrorKind::dimension_mismatch, path.string() + ": trailing bytes after " +
                                                           std::to_string(count) + " ids");
  }
  std::vector<std::uint32_t> ids(count);
  for (auto& id : ids) id = in.u32();
  return ids;
}

void write_meta(const std::filesystem::path& path, const Meta& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  write_bytes(path, out);
}

Meta read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::missing_file, "missing file " + path.string());
  Meta meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw LoadError(LoadErrorKind::bad_metadata, path.string() + ": malformed line \"" + line + "\"");
    }
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

const std::string& meta_value(const Meta& meta, const std::string& key, const std::filesystem::path& source) {
  auto it = meta.find(key);
  if (it == meta.end()) throw LoadError(LoadErrorKind::bad_metadata, source.string() + ": missing key " + key);
  return it->second;
}

}  // namespace wdae
