#pragma once

// MVOL: a JSON sidecar (<stem>.json) plus a raw little-endian C-order blob
// (<stem>.raw). u8 payloads hold masks, f32 payloads hold intensities,
// probabilities and logits.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

namespace fs = std::filesystem;

struct MvolHeader {
  std::string dtype;
  Shape shape;
  Spacing spacing;
};

/// Accepts "<stem>", "<stem>.json" or "<stem>.raw" and returns the stem.
inline fs::path mvol_stem(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".raw") {
    fs::path stem = path;
    stem.replace_extension();
    return stem;
  }
  return path;
}

inline fs::path mvol_json_path(const fs::path& path) {
  auto p = mvol_stem(path);
  p += ".json";
  return p;
}

inline fs::path mvol_raw_path(const fs::path& path) {
  auto p = mvol_stem(path);
  p += ".raw";
  return p;
}

inline bool mvol_exists(const fs::path& path) {
  return fs::is_regular_file(mvol_json_path(path)) && fs::is_regular_file(mvol_raw_path(path));
}

namespace detail {

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "u8") return 1;
  return 0;
}

inline void append_le(std::vector<char>& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline void append_le(std::vector<char>& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}

inline float read_le_f32(const unsigned char* p) {
  std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                       (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_all(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open for writing " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  out.close();
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace detail

/// Parses and validates only the JSON sidecar.
inline MvolHeader read_mvol_header(const fs::path& path) {
  const auto json_path = mvol_json_path(path);
  if (!fs::is_regular_file(json_path)) fail(ErrorCode::MissingFile, json_path.string());
  nlohmann::json j;
  try {
    std::ifstream in(json_path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, json_path.string() + ": " + e.what());
  }
  auto bad = [&](const std::string& why) { fail(ErrorCode::MalformedHeader, json_path.string() + ": " + why); };
  if (!j.is_object()) bad("not a JSON object");
  for (const char* key : {"mvol", "dtype", "shape", "spacing_mm", "order", "endian"}) {
    if (!j.contains(key)) bad(std::string("missing field '") + key + "'");
  }
  if (!j["mvol"].is_number_integer() || j["mvol"].get<int>() != 1) bad("unsupported mvol version");
  if (!j["dtype"].is_string() || detail::dtype_size(j["dtype"].get<std::string>()) == 0) bad("dtype must be f32 or u8");
  if (j["order"] != "C") bad("order must be \"C\"");
  if (j["endian"] != "LE") bad("endian must be \"LE\"");
  const auto& shape = j["shape"];
  const auto& spacing = j["spacing_mm"];
  if (!shape.is_array() || shape.size() != 3) bad("shape must be [D,H,W]");
  if (!spacing.is_array() || spacing.size() != 3) bad("spacing_mm must be [sz,sy,sx]");
  std::array<std::size_t, 3> dims{};
  std::array<double, 3> mm{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!shape[i].is_number_unsigned() || shape[i].get<std::uint64_t>() < 1) bad("shape entries must be integers >= 1");
    if (!spacing[i].is_number()) bad("spacing entries must be numbers");
    dims[i] = shape[i].get<std::size_t>();
    mm[i] = spacing[i].get<double>();
    if (!(std::isfinite(mm[i]) && mm[i] > 0.0)) bad("spacing entries must be finite and > 0");
  }
  return MvolHeader{j["dtype"].get<std::string>(), Shape{dims[0], dims[1], dims[2]},
                    Spacing{mm[0], mm[1], mm[2]}};
}

template <class Kind>
Grid<Kind> load_volume(const fs::path& path) {
  const auto header = read_mvol_header(path);
  if (header.dtype != Kind::dtype) {
    fail(ErrorCode::MalformedHeader, mvol_json_path(path).string() + ": dtype " + header.dtype +
                                         " cannot hold a " + std::string(Kind::name));
  }
  const auto raw_path = mvol_raw_path(path);
  if (!fs::is_regular_file(raw_path)) fail(ErrorCode::MissingFile, raw_path.string());
  const auto bytes = detail::read_all(raw_path);
  const std::size_t width = detail::dtype_size(header.dtype);
  const std::size_t expected = width * header.shape.voxels();
  if (bytes.size() != expected) {
    fail(ErrorCode::SizeMismatch, raw_path.string() + ": " + std::to_string(bytes.size()) +
                                      " bytes, expected " + std::to_string(expected));
  }
  using T = typename Kind::value_type;
  std::vector<T> data(header.shape.voxels());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if constexpr (std::is_same_v<T, float>) {
      data[i] = detail::read_le_f32(bytes.data() + 4 * i);
    } else {
      data[i] = bytes[i];
    }
  }
  try {
    return Grid<Kind>(header.shape, header.spacing, std::move(data));
  } catch (const Error& e) {
    fail(ErrorCode::InvariantViolation, raw_path.string() + ": " + e.what());
  }
}

using AnyVolume = std::variant<VoxelVolume, BinaryMask>;

/// Loads by dtype: f32 as VoxelVolume, u8 as BinaryMask. Use the typed
/// overload to load probabilities.
inline AnyVolume load_any_volume(const fs::path& path) {
  if (read_mvol_header(path).dtype == "u8") return load_volume<MaskKind>(path);
  return load_volume<IntensityKind>(path);
}

template <class Kind>
void save_volume(const Grid<Kind>& v, const fs::path& path) {
  // Grid construction already enforced the element domain.
  nlohmann::ordered_json j;
  j["mvol"] = 1;
  j["dtype"] = std::string(Kind::dtype);
  j["shape"] = {v.shape().depth, v.shape().rows, v.shape().cols};
  j["spacing_mm"] = {v.spacing().z, v.spacing().y, v.spacing().x};
  j["order"] = "C";
  j["endian"] = "LE";
  std::vector<char> blob;
  blob.reserve(v.data().size() * sizeof(typename Kind::value_type));
  for (auto value : v.data()) detail::append_le(blob, value);

  const auto stem = mvol_stem(path);
  if (stem.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(stem.parent_path(), ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create " + stem.parent_path().string());
  }
  const std::string header = j.dump() + "\n";
  detail::write_all(mvol_json_path(stem), header.data(), header.size());
  detail::write_all(mvol_raw_path(stem), blob.data(), blob.size());
}

}  // namespace sslprop
