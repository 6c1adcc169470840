// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor_io.hpp
 * @brief  Flat binary tensor files with a JSON sidecar.
 *
 * `<name>.bin` holds the row-major values as little-endian IEEE-754
 * (f64 or f32), nothing else. `<name>.bin.json` holds
 *   {"byte_order": "little", "dtype": "f64"|"f32", "shape": [..], ...}
 * plus any extra keys the writer attaches (e.g. the run config).
 */
#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsel/tensor.hpp"

namespace avsel {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;
using json = nlohmann::json;

inline fs::path sidecar_path(const fs::path &bin) {
  return fs::path(bin.string() + ".json");
}

inline std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline json read_json(const fs::path &path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error &e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path &path, const json &j) {
  write_text(path, j.dump(2) + "\n");
}

/// Shortest round-trip decimal form; "inf", "-inf", "nan" for non-finite.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

enum class DType { f64, f32 };

inline std::string dtype_name(DType d) { return d == DType::f64 ? "f64" : "f32"; }

inline DType parse_dtype(const std::string &s) {
  if (s == "f64") return DType::f64;
  if (s == "f32") return DType::f32;
  throw std::invalid_argument("unknown dtype '" + s + "' (expected f64 or f32)");
}

template <class Real>
void write_tensor(const fs::path &bin, const BasicTensor<Real> &t,
                  DType dtype = sizeof(Real) == 8 ? DType::f64 : DType::f32,
                  const json &extra = json::object()) {
  std::string bytes;
  const std::size_t width = dtype == DType::f64 ? 8 : 4;
  bytes.resize(t.size() * width);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = dtype == DType::f64
                             ? std::bit_cast<std::uint64_t>(double(t[i]))
                             : std::bit_cast<std::uint32_t>(float(t[i]));
    for (std::size_t b = 0; b < width; ++b)
      bytes[i * width + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  write_text(bin, bytes);
  json meta = extra;
  meta["byte_order"] = "little";
  meta["dtype"] = dtype_name(dtype);
  meta["shape"] = t.shape();
  write_json(sidecar_path(bin), meta);
}

template <class Real = double>
BasicTensor<Real> read_tensor(const fs::path &bin) {
  const json meta = read_json(sidecar_path(bin));
  if (!meta.contains("shape") || !meta.contains("dtype"))
    throw IoError("sidecar missing shape/dtype: " + sidecar_path(bin).string());
  if (meta.value("byte_order", "little") != "little")
    throw IoError("unsupported byte order in " + sidecar_path(bin).string());
  const Shape shape = meta["shape"].get<Shape>();
  const DType dtype = parse_dtype(meta["dtype"].get<std::string>());
  const std::string bytes = read_text(bin);
  const std::size_t width = dtype == DType::f64 ? 8 : 4;
  const std::size_t n = shape_size(shape);
  if (bytes.size() != n * width)
    throw IoError(bin.string() + ": expected " + std::to_string(n * width) +
                  " bytes for shape " + shape_str(shape) + ", found " +
                  std::to_string(bytes.size()));
  std::vector<Real> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < width; ++b)
      bits |= std::uint64_t(static_cast<unsigned char>(bytes[i * width + b]))
              << (8 * b);
    data[i] = dtype == DType::f64
                  ? static_cast<Real>(std::bit_cast<double>(bits))
                  : static_cast<Real>(std::bit_cast<float>(
                        static_cast<std::uint32_t>(bits)));
  }
  return BasicTensor<Real>(shape, std::move(data));
}

}  // namespace avsel
