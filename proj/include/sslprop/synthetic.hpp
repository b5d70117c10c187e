#pragma once

// Desk-scale stand-in for a clinical dataset: every case is an ellipsoid
// whose in-plane centre drifts linearly across frames, rendered as fg/bg
// intensity means plus seeded Gaussian noise.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/dataset.hpp"
#include "sslprop/error.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

struct SynthSpec {
  std::size_t labelled = 2;
  std::size_t unlabelled = 10;
  std::size_t test = 0;
  Shape shape{16, 48, 48};
  Spacing spacing{1.0, 1.0, 1.0};
  std::array<double, 2> drift{0.6, 0.4};          // centre shift per frame (rows, cols), voxels
  std::array<double, 2> radius_range{10.0, 16.0};  // in-plane semi-axes, voxels
  double depth_extent = 1.5;                       // z semi-axis as a multiple of depth / 2
  double center_jitter = 3.0;                      // per-case uniform offset of the centre, voxels
  double foreground_mean = 1.0;
  double background_mean = 0.0;
  double noise = 0.3;
  std::uint64_t seed = 0;
  std::vector<std::string> vendors;  // cycled over all cases when non-empty

  void validate() const {
    auto bad = [](const std::string& why) { fail(ErrorCode::BadSpec, why); };
    if (labelled < 1) bad("at least one labelled case is required");
    if (unlabelled < 1) bad("at least one unlabelled case is required");
    if (shape.depth < 8 || shape.rows < 8 || shape.cols < 8) bad("every axis must be >= 8");
    if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) bad("spacing must be > 0");
    if (foreground_mean == background_mean) bad("foreground and background means must differ");
    if (!(noise >= 0.0) || !std::isfinite(noise)) bad("noise must be >= 0");
    if (!(radius_range[0] > 0.0 && radius_range[0] <= radius_range[1])) bad("radius range must satisfy 0 < min <= max");
    if (!(depth_extent > 0.0)) bad("depth_extent must be > 0");
    if (!(center_jitter >= 0.0)) bad("center_jitter must be >= 0");
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
      if (!j.is_object()) fail(ErrorCode::BadSpec, "spec must be a JSON object");
      s.labelled = j.value("labelled", s.labelled);
      s.unlabelled = j.value("unlabelled", s.unlabelled);
      s.test = j.value("test", s.test);
      if (j.contains("shape")) {
        const auto v = j.at("shape").get<std::array<std::size_t, 3>>();
        s.shape = {v[0], v[1], v[2]};
      }
      if (j.contains("spacing_mm")) {
        const auto v = j.at("spacing_mm").get<std::array<double, 3>>();
        s.spacing = {v[0], v[1], v[2]};
      }
      s.drift = j.value("drift", s.drift);
      s.radius_range = j.value("radius_range", s.radius_range);
      s.depth_extent = j.value("depth_extent", s.depth_extent);
      s.center_jitter = j.value("center_jitter", s.center_jitter);
      s.foreground_mean = j.value("foreground_mean", s.foreground_mean);
      s.background_mean = j.value("background_mean", s.background_mean);
      s.noise = j.value("noise", s.noise);
      s.seed = j.value("seed", s.seed);
      s.vendors = j.value("vendors", s.vendors);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::BadSpec, e.what());
    }
    s.validate();
    return s;
  }

  nlohmann::ordered_json to_json() const {
    return {{"labelled", labelled},
            {"unlabelled", unlabelled},
            {"test", test},
            {"shape", {shape.depth, shape.rows, shape.cols}},
            {"spacing_mm", {spacing.z, spacing.y, spacing.x}},
            {"drift", drift},
            {"radius_range", radius_range},
            {"depth_extent", depth_extent},
            {"center_jitter", center_jitter},
            {"foreground_mean", foreground_mean},
            {"background_mean", background_mean},
            {"noise", noise},
            {"seed", seed},
            {"vendors", vendors}};
  }
};

enum class SynthRole { Labelled, Unlabelled, Test };

/// Geometry of one generated case, drawn from its case seed.
struct EllipsoidCase {
  double center_row = 0.0;  // at the middle frame
  double center_col = 0.0;
  double drift_row = 0.0;
  double drift_col = 0.0;
  double radius_row = 0.0;
  double radius_col = 0.0;
  double radius_depth = 0.0;

  static EllipsoidCase draw(const SynthSpec& spec, std::uint64_t case_seed) {
    SplitMix64 rng(case_seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.unit(); };
    EllipsoidCase c;
    c.radius_row = uniform(spec.radius_range[0], spec.radius_range[1]);
    c.radius_col = uniform(spec.radius_range[0], spec.radius_range[1]);
    c.center_row = (static_cast<double>(spec.shape.rows) - 1.0) / 2.0 + uniform(-spec.center_jitter, spec.center_jitter);
    c.center_col = (static_cast<double>(spec.shape.cols) - 1.0) / 2.0 + uniform(-spec.center_jitter, spec.center_jitter);
    const double drift_scale = uniform(0.5, 1.5);
    c.drift_row = spec.drift[0] * drift_scale;
    c.drift_col = spec.drift[1] * drift_scale;
    c.radius_depth = spec.depth_extent * static_cast<double>(spec.shape.depth) / 2.0;
    return c;
  }

  BinaryMask render(const Shape& shape, const Spacing& spacing) const {
    std::vector<std::uint8_t> m(shape.voxels(), 0);
    const double mid = (static_cast<double>(shape.depth) - 1.0) / 2.0;
    std::size_t o = 0;
    for (std::size_t z = 0; z < shape.depth; ++z) {
      const double dz = (static_cast<double>(z) - mid) / radius_depth;
      const double cy = center_row + drift_row * (static_cast<double>(z) - mid);
      const double cx = center_col + drift_col * (static_cast<double>(z) - mid);
      for (std::size_t y = 0; y < shape.rows; ++y) {
        const double dy = (static_cast<double>(y) - cy) / radius_row;
        for (std::size_t x = 0; x < shape.cols; ++x) {
          const double dx = (static_cast<double>(x) - cx) / radius_col;
          m[o++] = dz * dz + dy * dy + dx * dx <= 1.0 ? 1 : 0;
        }
      }
    }
    return BinaryMask(shape, spacing, std::move(m));
  }
};

struct SynthCase {
  std::string id;
  SynthRole role;
  std::optional<std::string> vendor;
  VoxelVolume image;
  BinaryMask truth;
};

inline std::string synth_case_id(SynthRole role, std::size_t index) {
  std::ostringstream os;
  os << (role == SynthRole::Labelled ? "lab_" : role == SynthRole::Unlabelled ? "unl_" : "test_")
     << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

/// Case ordinals run over labelled, then unlabelled, then test cases; the
/// case seed is derive_seed(spec.seed, ordinal). Geometry comes from the
/// case seed's stream, noise from a Gaussian stream seeded with its hash.
inline std::vector<SynthCase> synthesize(const SynthSpec& spec) {
  spec.validate();
  std::vector<SynthCase> cases;
  std::size_t ordinal = 0;
  auto make = [&](SynthRole role, std::size_t index) {
    const std::uint64_t case_seed = derive_seed(spec.seed, ordinal);
    const auto geometry = EllipsoidCase::draw(spec, case_seed);
    auto truth = geometry.render(spec.shape, spec.spacing);
    GaussianStream noise(splitmix_hash(case_seed));
    std::vector<float> image(truth.data().size());
    for (std::size_t i = 0; i < image.size(); ++i) {
      const double mean = truth.data()[i] ? spec.foreground_mean : spec.background_mean;
      image[i] = static_cast<float>(mean + spec.noise * noise());
    }
    std::optional<std::string> vendor;
    if (!spec.vendors.empty()) vendor = spec.vendors[ordinal % spec.vendors.size()];
    cases.push_back({synth_case_id(role, index), role, vendor, VoxelVolume(spec.shape, spec.spacing, std::move(image)),
                     std::move(truth)});
    ++ordinal;
  };
  for (std::size_t i = 0; i < spec.labelled; ++i) make(SynthRole::Labelled, i);
  for (std::size_t i = 0; i < spec.unlabelled; ++i) make(SynthRole::Unlabelled, i);
  for (std::size_t i = 0; i < spec.test; ++i) make(SynthRole::Test, i);
  return cases;
}

struct SynthDataset {
  fs::path root;
  fs::path manifest_path;
  fs::path truth_dir;
  fs::path test_dir;
  fs::path tags_path;
  DatasetManifest manifest;
  std::size_t truth_count = 0;
};

/// Writes <root>/manifest.json, images/, masks/ (labelled ground truth),
/// test/ (held-out images), tags.json, and the sealed _truth/ directory
/// holding ground truth of every unlabelled and test case.
inline SynthDataset generate(const SynthSpec& spec, const fs::path& root) {
  const auto cases = synthesize(spec);
  SynthDataset out;
  out.root = root;
  out.manifest_path = root / "manifest.json";
  out.truth_dir = root / "_truth";
  out.test_dir = root / "test";
  out.tags_path = root / "tags.json";
  for (const char* sub : {"images", "masks", "test", "_truth"}) fs::remove_all(root / sub);
  fs::create_directories(root);

  nlohmann::ordered_json tags = nlohmann::ordered_json::object();
  for (const auto& c : cases) {
    tags[c.id] = c.vendor ? nlohmann::ordered_json::array({*c.vendor}) : nlohmann::ordered_json::array();
    switch (c.role) {
      case SynthRole::Labelled:
        save_volume(c.image, root / "images" / c.id);
        save_volume(c.truth, root / "masks" / c.id);
        out.manifest.labelled.push_back({c.id, root / "images" / c.id, root / "masks" / c.id, c.vendor});
        break;
      case SynthRole::Unlabelled:
        save_volume(c.image, root / "images" / c.id);
        save_volume(c.truth, out.truth_dir / c.id);
        out.manifest.unlabelled.push_back({c.id, root / "images" / c.id, c.vendor});
        ++out.truth_count;
        break;
      case SynthRole::Test:
        save_volume(c.image, out.test_dir / c.id);
        save_volume(c.truth, out.truth_dir / c.id);
        ++out.truth_count;
        break;
    }
  }
  write_manifest(out.manifest, out.manifest_path);
  std::ofstream(out.tags_path, std::ios::trunc) << tags.dump(2) << "\n";
  std::ofstream(root / "spec.json", std::ios::trunc) << spec.to_json().dump(2) << "\n";
  return out;
}

}  // namespace sslprop
