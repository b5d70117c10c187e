#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sslprop/error.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

/// Target in-plane extent for resize_inplane.
struct InPlaneSize {
  std::size_t rows = 0;
  std::size_t cols = 0;

  friend constexpr bool operator==(const InPlaneSize&, const InPlaneSize&) = default;
};

namespace detail {

// Pixel-centre mapping: src = (dst + 0.5) * S / T - 0.5.
inline double source_coordinate(std::size_t dst, std::size_t src_extent, std::size_t dst_extent) {
  return (static_cast<double>(dst) + 0.5) * static_cast<double>(src_extent) /
             static_cast<double>(dst_extent) -
         0.5;
}

struct LinearTap {
  std::size_t lo;
  std::size_t hi;
  double weight;  // of hi
};

inline std::vector<LinearTap> linear_taps(std::size_t src_extent, std::size_t dst_extent) {
  std::vector<LinearTap> taps(dst_extent);
  const double last = static_cast<double>(src_extent - 1);
  for (std::size_t d = 0; d < dst_extent; ++d) {
    const double s = std::clamp(source_coordinate(d, src_extent, dst_extent), 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const auto hi = std::min(lo + 1, src_extent - 1);
    taps[d] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

// Ties (fraction exactly .5) go to the lower source index.
inline std::vector<std::size_t> nearest_taps(std::size_t src_extent, std::size_t dst_extent) {
  std::vector<std::size_t> taps(dst_extent);
  const double last = static_cast<double>(src_extent - 1);
  for (std::size_t d = 0; d < dst_extent; ++d) {
    const double s = source_coordinate(d, src_extent, dst_extent);
    taps[d] = static_cast<std::size_t>(std::clamp(std::ceil(s - 0.5), 0.0, last));
  }
  return taps;
}

// a + w (b - a), bounded by [min(a,b), max(a,b)] so rounding cannot widen the range.
inline double bounded_lerp(double a, double b, double w) {
  const double v = a + w * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

template <class Kind>
std::vector<float> bilinear(const Grid<Kind>& v, InPlaneSize target) {
  const auto& s = v.shape();
  const auto ty = linear_taps(s.rows, target.rows);
  const auto tx = linear_taps(s.cols, target.cols);
  std::vector<float> out(s.depth * target.rows * target.cols);
  std::size_t o = 0;
  for (std::size_t z = 0; z < s.depth; ++z) {
    for (std::size_t y = 0; y < target.rows; ++y) {
      for (std::size_t x = 0; x < target.cols; ++x) {
        const double a = v.at(z, ty[y].lo, tx[x].lo);
        const double b = v.at(z, ty[y].lo, tx[x].hi);
        const double c = v.at(z, ty[y].hi, tx[x].lo);
        const double d = v.at(z, ty[y].hi, tx[x].hi);
        const double top = bounded_lerp(a, b, tx[x].weight);
        const double bottom = bounded_lerp(c, d, tx[x].weight);
        out[o++] = static_cast<float>(bounded_lerp(top, bottom, ty[y].weight));
      }
    }
  }
  return out;
}

}  // namespace detail

/// Resamples every frame to `target`; the frame count and spacing are kept.
/// Intensities and probabilities are bilinear, masks nearest-neighbour.
template <class Kind>
Grid<Kind> resize_inplane(const Grid<Kind>& v, InPlaneSize target) {
  if (target.rows < 1 || target.cols < 1) {
    fail(ErrorCode::InvariantViolation, "resize target must be >= 1x1");
  }
  const auto& s = v.shape();
  const Shape out_shape{s.depth, target.rows, target.cols};
  if (target.rows == s.rows && target.cols == s.cols) return v;

  if constexpr (std::is_same_v<Kind, MaskKind>) {
    const auto ty = detail::nearest_taps(s.rows, target.rows);
    const auto tx = detail::nearest_taps(s.cols, target.cols);
    std::vector<std::uint8_t> out(out_shape.voxels());
    std::size_t o = 0;
    for (std::size_t z = 0; z < s.depth; ++z)
      for (std::size_t y = 0; y < target.rows; ++y)
        for (std::size_t x = 0; x < target.cols; ++x) out[o++] = v.at(z, ty[y], tx[x]);
    return BinaryMask(out_shape, v.spacing(), std::move(out));
  } else {
    auto out = detail::bilinear(v, target);
    if constexpr (std::is_same_v<Kind, ProbKind>) {
      for (auto& p : out) p = std::clamp(p, 0.0f, 1.0f);
    }
    return Grid<Kind>(out_shape, v.spacing(), std::move(out));
  }
}

}  // namespace sslprop
