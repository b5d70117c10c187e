#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sslprop/error.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

/// Versioned pseudo labels: <root>/iter_<i>/<case_id>.{json,raw}, with the
/// optional iteration-0 probability maps under <root>/iter_0/probs/.
/// A snapshot is staged in iter_<i>.partial and renamed into place, so a
/// visible iteration is always complete.
class PseudoLabelStore {
 public:
  explicit PseudoLabelStore(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }

  static std::string iteration_name(std::size_t i) { return "iter_" + std::to_string(i); }

  fs::path iteration_dir(std::size_t i) const { return root_ / iteration_name(i); }
  fs::path mask_path(std::size_t i, const std::string& id) const { return iteration_dir(i) / id; }
  fs::path probs_path(std::size_t i, const std::string& id) const {
    return iteration_dir(i) / "probs" / id;
  }

  /// Number of committed snapshots; they must be iter_0..iter_{n-1}.
  std::size_t iteration_count() const {
    std::vector<std::size_t> found;
    if (fs::is_directory(root_)) {
      for (const auto& entry : fs::directory_iterator(root_)) {
        if (!entry.is_directory()) continue;
        const auto name = entry.path().filename().string();
        if (name.rfind("iter_", 0) != 0) continue;
        std::size_t idx = 0;
        const char* first = name.data() + 5;
        const char* last = name.data() + name.size();
        auto [ptr, ec] = std::from_chars(first, last, idx);
        if (ec != std::errc() || ptr != last || first == last) continue;
        found.push_back(idx);
      }
    }
    std::sort(found.begin(), found.end());
    for (std::size_t i = 0; i < found.size(); ++i) {
      if (found[i] != i) {
        fail(ErrorCode::StoreError, root_.string() + ": snapshot indices are not contiguous from 0");
      }
    }
    return found.size();
  }

  bool has_iteration(std::size_t i) const { return i < iteration_count(); }

  std::vector<std::string> case_ids(std::size_t i) const {
    require_iteration(i);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(iteration_dir(i))) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        ids.push_back(entry.path().stem().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  BinaryMask load_mask(std::size_t i, const std::string& id) const {
    require_iteration(i);
    return load_volume<MaskKind>(mask_path(i, id));
  }

  std::optional<ProbVolume> load_probs(std::size_t i, const std::string& id) const {
    require_iteration(i);
    if (!mvol_exists(probs_path(i, id))) return std::nullopt;
    return load_volume<ProbKind>(probs_path(i, id));
  }

  std::map<std::string, BinaryMask> load_snapshot(std::size_t i) const {
    std::map<std::string, BinaryMask> out;
    for (const auto& id : case_ids(i)) out.emplace(id, load_mask(i, id));
    return out;
  }

  /// Commits snapshot i. It must be the next index, and for i > 0 it must
  /// cover exactly the cases of snapshot i-1 with matching shapes.
  void write_iteration(std::size_t i, const std::map<std::string, BinaryMask>& masks,
                       const std::map<std::string, ProbVolume>* probs = nullptr) const {
    const std::size_t next = iteration_count();
    if (i != next) {
      fail(ErrorCode::StoreError, "snapshot " + std::to_string(i) + " written out of order; next is " +
                                      std::to_string(next));
    }
    if (masks.empty()) fail(ErrorCode::StoreError, "empty snapshot");
    if (i > 0) {
      const auto previous = case_ids(i - 1);
      std::vector<std::string> current;
      for (const auto& [id, mask] : masks) current.push_back(id);
      if (previous != current) {
        fail(ErrorCode::CoverageFailure, "snapshot " + std::to_string(i) + " does not cover the cases of snapshot " +
                                             std::to_string(i - 1));
      }
      for (const auto& [id, mask] : masks) {
        if (read_mvol_header(mask_path(i - 1, id)).shape != mask.shape()) {
          fail(ErrorCode::ShapeMismatch, "pseudo label '" + id + "' changed shape between snapshots");
        }
      }
    }
    const fs::path staging = root_ / (iteration_name(i) + ".partial");
    std::error_code ec;
    fs::remove_all(staging, ec);
    fs::create_directories(staging);
    for (const auto& [id, mask] : masks) save_volume(mask, staging / id);
    if (probs) {
      for (const auto& [id, p] : *probs) {
        if (!masks.contains(id)) fail(ErrorCode::StoreError, "probability map for unknown case '" + id + "'");
        require_same_shape(p, masks.at(id), "probability map '" + id + "'");
        save_volume(p, staging / "probs" / id);
      }
    }
    fs::rename(staging, iteration_dir(i), ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot commit " + iteration_dir(i).string() + ": " + ec.message());
  }

  /// Drops snapshots with index >= keep.
  void truncate(std::size_t keep) const {
    const std::size_t n = iteration_count();
    for (std::size_t i = n; i-- > keep;) fs::remove_all(iteration_dir(i));
  }

 private:
  void require_iteration(std::size_t i) const {
    if (!fs::is_directory(iteration_dir(i))) {
      fail(ErrorCode::StoreError, "snapshot " + iteration_dir(i).string() + " does not exist");
    }
  }

  fs::path root_;
};

}  // namespace sslprop
