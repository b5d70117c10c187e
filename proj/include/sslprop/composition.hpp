#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "sslprop/error.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

/// R insertion points into an unlabelled volume of L_u frames. A location F
/// splices the labelled block between unlabelled frames F-1 and F, so 0
/// prepends and L_u appends.
struct InsertionPlan {
  std::vector<std::size_t> locations;
  std::uint64_t seed = 0;
};

/// Draws R locations from [0, L_u] with SplitMix64(seed). Without
/// replacement (partial Fisher-Yates over the slot list) when R <= L_u + 1,
/// otherwise each location is an independent bounded draw.
inline InsertionPlan sample_insertion_plan(std::size_t unlabelled_frames, std::size_t count,
                                           std::uint64_t seed) {
  if (unlabelled_frames < 1) fail(ErrorCode::BadInsertIndex, "unlabelled volume has no frames");
  if (count < 1) fail(ErrorCode::BadInsertIndex, "R must be >= 1");
  const std::size_t slots = unlabelled_frames + 1;
  SplitMix64 rng(seed);
  InsertionPlan plan;
  plan.seed = seed;
  plan.locations.reserve(count);
  if (count <= slots) {
    std::vector<std::size_t> pool(slots);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t r = 0; r < count; ++r) {
      const auto j = r + static_cast<std::size_t>(rng.bounded(slots - r));
      std::swap(pool[r], pool[j]);
      plan.locations.push_back(pool[r]);
    }
  } else {
    for (std::size_t r = 0; r < count; ++r) {
      plan.locations.push_back(static_cast<std::size_t>(rng.bounded(slots)));
    }
  }
  return plan;
}

struct FrameOrigin {
  enum class Source : std::uint8_t { Labelled, Unlabelled };
  Source source;
  std::size_t index;

  static constexpr FrameOrigin labelled(std::size_t i) noexcept { return {Source::Labelled, i}; }
  static constexpr FrameOrigin unlabelled(std::size_t i) noexcept { return {Source::Unlabelled, i}; }

  friend constexpr bool operator==(const FrameOrigin&, const FrameOrigin&) = default;
};

/// x^c: unlabelled[0, F) ++ labelled[0, L_l) ++ unlabelled[F, L_u).
struct ComposedSequence {
  VoxelVolume frames;
  std::size_t prompt_begin;  // [prompt_begin, prompt_end) holds the labelled block
  std::size_t prompt_end;
  BinaryMask prompt_masks;   // one frame per prompt frame, in order
  std::vector<FrameOrigin> origin;

  std::size_t prompt_count() const noexcept { return prompt_end - prompt_begin; }
  std::size_t unlabelled_count() const noexcept { return origin.size() - prompt_count(); }

  std::vector<std::size_t> prompt_frames() const {
    std::vector<std::size_t> out(prompt_count());
    std::iota(out.begin(), out.end(), prompt_begin);
    return out;
  }
};

inline ComposedSequence compose_insert(const VoxelVolume& labelled_image, const BinaryMask& labelled_mask,
                                       const VoxelVolume& unlabelled, std::size_t location) {
  require_same_shape(labelled_image, labelled_mask, "labelled image/mask");
  const auto& ls = labelled_image.shape();
  const auto& us = unlabelled.shape();
  if (ls.rows != us.rows || ls.cols != us.cols) {
    fail(ErrorCode::InPlaneMismatch, "labelled " + to_string(ls) + " vs unlabelled " + to_string(us) +
                                         "; resize to a common in-plane size first");
  }
  if (location > us.depth) {
    fail(ErrorCode::BadInsertIndex, "location " + std::to_string(location) + " outside [0, " +
                                        std::to_string(us.depth) + "]");
  }
  const std::size_t plane = us.frame_voxels();
  const Shape shape{ls.depth + us.depth, us.rows, us.cols};
  std::vector<float> data;
  data.reserve(shape.voxels());
  std::vector<FrameOrigin> origin;
  origin.reserve(shape.depth);

  const auto u = unlabelled.data();
  const auto l = labelled_image.data();
  data.insert(data.end(), u.begin(), u.begin() + static_cast<std::ptrdiff_t>(location * plane));
  data.insert(data.end(), l.begin(), l.end());
  data.insert(data.end(), u.begin() + static_cast<std::ptrdiff_t>(location * plane), u.end());
  for (std::size_t i = 0; i < location; ++i) origin.push_back(FrameOrigin::unlabelled(i));
  for (std::size_t i = 0; i < ls.depth; ++i) origin.push_back(FrameOrigin::labelled(i));
  for (std::size_t i = location; i < us.depth; ++i) origin.push_back(FrameOrigin::unlabelled(i));

  return ComposedSequence{VoxelVolume(shape, unlabelled.spacing(), std::move(data)), location,
                          location + ls.depth, labelled_mask, std::move(origin)};
}

/// Keeps only the frames whose origin is unlabelled, in unlabelled order.
template <class Kind>
Grid<Kind> extract_unlabelled_frames(const Grid<Kind>& per_frame, const ComposedSequence& seq) {
  const auto& s = per_frame.shape();
  const auto& cs = seq.frames.shape();
  if (s.depth != cs.depth || s.rows != cs.rows || s.cols != cs.cols) {
    fail(ErrorCode::FrameCountMismatch, "per-frame maps " + to_string(s) + " vs composed sequence " +
                                            to_string(cs));
  }
  const std::size_t plane = s.frame_voxels();
  const std::size_t count = seq.unlabelled_count();
  std::vector<typename Kind::value_type> out(count * plane);
  for (std::size_t t = 0; t < seq.origin.size(); ++t) {
    const auto& o = seq.origin[t];
    if (o.source != FrameOrigin::Source::Unlabelled) continue;
    const auto src = per_frame.frame(t);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(o.index * plane));
  }
  return Grid<Kind>(Shape{count, s.rows, s.cols}, per_frame.spacing(), std::move(out));
}

inline ProbVolume extract_unlabelled(const ProbVolume& probs, const ComposedSequence& seq) {
  return extract_unlabelled_frames(probs, seq);
}

}  // namespace sslprop
