#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sslprop/error.hpp"

namespace sslprop {

/// Grid extent as frames x rows x cols. Frames are the slowest axis.
struct Shape {
  std::size_t depth = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  constexpr std::size_t frame_voxels() const noexcept { return rows * cols; }
  constexpr std::size_t voxels() const noexcept { return depth * rows * cols; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.depth << "," << s.rows << "," << s.cols << ")";
  return os.str();
}

/// Millimetres per voxel along (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

struct IntensityKind {
  using value_type = float;
  static constexpr std::string_view name = "VoxelVolume";
  static constexpr std::string_view dtype = "f32";
  static bool valid(float v) noexcept { return std::isfinite(v); }
};

struct MaskKind {
  using value_type = std::uint8_t;
  static constexpr std::string_view name = "BinaryMask";
  static constexpr std::string_view dtype = "u8";
  static bool valid(std::uint8_t v) noexcept { return v <= 1; }
};

struct ProbKind {
  using value_type = float;
  static constexpr std::string_view name = "ProbVolume";
  static constexpr std::string_view dtype = "f32";
  static bool valid(float v) noexcept { return v >= 0.0f && v <= 1.0f; }
};

/// Dense C-order 3D grid whose element domain is checked at construction.
/// Instances are immutable; build the buffer first, then wrap it.
template <class Kind>
class Grid {
 public:
  using kind = Kind;
  using value_type = typename Kind::value_type;

  Grid(Shape shape, Spacing spacing, std::vector<value_type> data)
      : shape_(shape), spacing_(spacing), data_(std::move(data)) {
    validate();
  }

  static Grid filled(Shape shape, Spacing spacing, value_type value) {
    return Grid(shape, spacing, std::vector<value_type>(shape.voxels(), value));
  }

  const Shape& shape() const noexcept { return shape_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::span<const value_type> data() const noexcept { return data_; }
  const std::vector<value_type>& values() const& noexcept { return data_; }
  std::vector<value_type> values() && noexcept { return std::move(data_); }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * shape_.rows + y) * shape_.cols + x;
  }
  value_type at(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return data_[index(z, y, x)];
  }
  std::span<const value_type> frame(std::size_t z) const noexcept {
    return std::span<const value_type>(data_).subspan(z * shape_.frame_voxels(),
                                                       shape_.frame_voxels());
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.shape_ == b.shape_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
  }

 private:
  void validate() const {
    if (shape_.depth < 1 || shape_.rows < 1 || shape_.cols < 1) {
      fail(ErrorCode::InvariantViolation,
           std::string(Kind::name) + " shape must be >= 1 on every axis, got " + to_string(shape_));
    }
    for (double s : {spacing_.z, spacing_.y, spacing_.x}) {
      if (!(s > 0.0) || !std::isfinite(s)) {
        fail(ErrorCode::InvariantViolation, std::string(Kind::name) + " spacing must be finite and > 0");
      }
    }
    if (data_.size() != shape_.voxels()) {
      fail(ErrorCode::InvariantViolation, std::string(Kind::name) + " data length " +
                                              std::to_string(data_.size()) + " != " +
                                              std::to_string(shape_.voxels()));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!Kind::valid(data_[i])) {
        std::ostringstream os;
        os << Kind::name << " element " << i << " out of domain: " << +data_[i];
        fail(ErrorCode::InvariantViolation, os.str());
      }
    }
  }

  Shape shape_;
  Spacing spacing_;
  std::vector<value_type> data_;
};

using VoxelVolume = Grid<IntensityKind>;
using BinaryMask = Grid<MaskKind>;
using ProbVolume = Grid<ProbKind>;

/// Byte-level equality of geometry and payload; distinguishes -0.0f from 0.0f.
template <class KindA, class KindB>
bool bitwise_equal(const Grid<KindA>& a, const Grid<KindB>& b) {
  static_assert(sizeof(typename KindA::value_type) == sizeof(typename KindB::value_type));
  if (a.shape() != b.shape() || a.spacing() != b.spacing()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(typename KindA::value_type)) == 0;
}

/// Foreground where p >= threshold.
inline BinaryMask threshold_probs(const ProbVolume& p, float threshold) {
  std::vector<std::uint8_t> out(p.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.data()[i] >= threshold ? 1 : 0;
  return BinaryMask(p.shape(), p.spacing(), std::move(out));
}

inline std::size_t count_foreground(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v;
  return n;
}

template <class KindA, class KindB>
void require_same_shape(const Grid<KindA>& a, const Grid<KindB>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + to_string(a.shape()) + " vs " +
                                       to_string(b.shape()));
  }
}

}  // namespace sslprop
