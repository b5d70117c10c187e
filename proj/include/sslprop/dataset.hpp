#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/splitmix.hpp"

namespace sslprop {

struct LabelledCase {
  std::string id;
  fs::path image;
  fs::path mask;
  std::optional<std::string> vendor;
};

struct UnlabelledCase {
  std::string id;
  fs::path image;
  std::optional<std::string> vendor;
};

/// D = {D^l, D^u}. Paths are absolute after parsing.
struct DatasetManifest {
  std::vector<LabelledCase> labelled;
  std::vector<UnlabelledCase> unlabelled;

  std::size_t labelled_count() const noexcept { return labelled.size(); }
  std::size_t unlabelled_count() const noexcept { return unlabelled.size(); }

  std::vector<std::string> unlabelled_ids() const {
    std::vector<std::string> ids;
    ids.reserve(unlabelled.size());
    for (const auto& c : unlabelled) ids.push_back(c.id);
    return ids;
  }

  const UnlabelledCase& unlabelled_case(const std::string& id) const {
    for (const auto& c : unlabelled)
      if (c.id == id) return c;
    fail(ErrorCode::MalformedManifest, "unknown unlabelled case '" + id + "'");
  }
};

/// Case ids become file stems in the store, so they are restricted to a
/// portable character set.
inline bool valid_case_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

inline DatasetManifest parse_manifest(const fs::path& path) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::MissingFile, path.string());
  nlohmann::json j;
  try {
    std::ifstream in(path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedManifest, path.string() + ": " + e.what());
  }
  auto bad = [&](const std::string& why) { fail(ErrorCode::MalformedManifest, path.string() + ": " + why); };
  if (!j.is_object()) bad("manifest must be a JSON object");
  if (!j.contains("labelled") || !j["labelled"].is_array()) bad("'labelled' must be an array");
  if (!j.contains("unlabelled") || !j["unlabelled"].is_array()) bad("'unlabelled' must be an array");
  if (j["labelled"].empty()) bad("at least one labelled case is required");
  if (j["unlabelled"].empty()) bad("at least one unlabelled case is required");

  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const nlohmann::json& entry, const char* key) -> fs::path {
    if (!entry.contains(key) || !entry[key].is_string()) bad(std::string("entry missing string '") + key + "'");
    fs::path p = entry[key].get<std::string>();
    if (p.is_relative()) p = base / p;
    p = p.lexically_normal();
    if (!mvol_exists(p)) fail(ErrorCode::MissingReferencedFile, p.string());
    return p;
  };
  auto read_id = [&](const nlohmann::json& entry) {
    if (!entry.is_object()) bad("entries must be objects");
    if (!entry.contains("id") || !entry["id"].is_string()) bad("entry missing string 'id'");
    auto id = entry["id"].get<std::string>();
    if (!valid_case_id(id)) bad("case id '" + id + "' must match [A-Za-z0-9_.-]+");
    return id;
  };
  auto read_vendor = [&](const nlohmann::json& entry) -> std::optional<std::string> {
    if (!entry.contains("vendor") || entry["vendor"].is_null()) return std::nullopt;
    if (!entry["vendor"].is_string()) bad("'vendor' must be a string");
    return entry["vendor"].get<std::string>();
  };

  DatasetManifest m;
  std::set<std::string> seen;
  auto claim = [&](const std::string& id) {
    if (!seen.insert(id).second) fail(ErrorCode::DuplicateCaseId, "'" + id + "' in " + path.string());
  };
  for (const auto& entry : j["labelled"]) {
    LabelledCase c;
    c.id = read_id(entry);
    claim(c.id);
    c.image = resolve(entry, "image");
    c.mask = resolve(entry, "mask");
    c.vendor = read_vendor(entry);
    const auto image = read_mvol_header(c.image);
    const auto mask = read_mvol_header(c.mask);
    if (image.shape != mask.shape) {
      fail(ErrorCode::ShapeMismatch, "labelled case '" + c.id + "': image " + to_string(image.shape) +
                                         " vs mask " + to_string(mask.shape));
    }
    m.labelled.push_back(std::move(c));
  }
  for (const auto& entry : j["unlabelled"]) {
    UnlabelledCase c;
    c.id = read_id(entry);
    claim(c.id);
    c.image = resolve(entry, "image");
    c.vendor = read_vendor(entry);
    m.unlabelled.push_back(std::move(c));
  }
  return m;
}

/// Writes a manifest with paths relative to the manifest's directory when
/// they live beneath it.
inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    auto r = fs::absolute(p).lexically_relative(base);
    return (r.empty() || *r.begin() == "..") ? p.string() : r.generic_string();
  };
  nlohmann::ordered_json j;
  j["labelled"] = nlohmann::ordered_json::array();
  j["unlabelled"] = nlohmann::ordered_json::array();
  for (const auto& c : m.labelled) {
    nlohmann::ordered_json e{{"id", c.id}, {"image", rel(c.image)}, {"mask", rel(c.mask)}};
    if (c.vendor) e["vendor"] = *c.vendor;
    j["labelled"].push_back(std::move(e));
  }
  for (const auto& c : m.unlabelled) {
    nlohmann::ordered_json e{{"id", c.id}, {"image", rel(c.image)}};
    if (c.vendor) e["vendor"] = *c.vendor;
    j["unlabelled"].push_back(std::move(e));
  }
  fs::create_directories(base);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Unlabelled case id -> fold index in [0, k).
struct FoldAssignment {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold_of;

  std::vector<std::string> members(std::size_t fold) const {
    std::vector<std::string> ids;
    for (const auto& [id, f] : fold_of)
      if (f == fold) ids.push_back(id);
    return ids;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (const auto& [id, f] : fold_of) ++sizes[f];
    return sizes;
  }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Sorts the ids, shuffles them with Fisher-Yates on SplitMix64(seed), then
/// deals them round-robin into folds 0..k-1.
inline FoldAssignment split_folds(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::BadFoldCount, "k must be >= 2, got " + std::to_string(k));
  if (ids.empty()) fail(ErrorCode::MalformedManifest, "no unlabelled cases to split");
  std::sort(ids.begin(), ids.end());
  SplitMix64 rng(seed);
  fisher_yates_shuffle(std::span<std::string>(ids), rng);
  FoldAssignment out;
  out.k = k;
  for (std::size_t i = 0; i < ids.size(); ++i) out.fold_of[ids[i]] = i % k;
  return out;
}

inline FoldAssignment split_folds(const DatasetManifest& m, std::size_t k, std::uint64_t seed) {
  return split_folds(m.unlabelled_ids(), k, seed);
}

}  // namespace sslprop
