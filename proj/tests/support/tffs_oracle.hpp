#pragma once

// Brute-force ensemble: every (labelled, insertion) run is recomposed by
// hand, propagated, squashed and cut back to the unlabelled frames, then the
// R * M maps are summed in canonical order and divided once.

#include <cmath>
#include <vector>

#include "sslprop/segmenter.hpp"
#include "support/oracle.hpp"

namespace oracle {

struct LabelledPair {
  sslprop::VoxelVolume image;
  sslprop::BinaryMask mask;
};

/// The single-run map for labelled volume `lab` spliced in at `loc`.
inline std::vector<float> single_run(const sslprop::VoxelVolume& unl, const LabelledPair& lab, std::size_t loc,
                                     const sslprop::FrozenSegmenter& backend) {
  const auto us = unl.shape();
  const std::size_t ll = lab.image.shape().depth;
  const std::size_t plane = us.rows * us.cols;
  std::vector<float> frames;
  for (std::size_t t = 0; t < loc; ++t) frames.insert(frames.end(), unl.frame(t).begin(), unl.frame(t).end());
  for (std::size_t t = 0; t < ll; ++t) frames.insert(frames.end(), lab.image.frame(t).begin(), lab.image.frame(t).end());
  for (std::size_t t = loc; t < us.depth; ++t) frames.insert(frames.end(), unl.frame(t).begin(), unl.frame(t).end());
  std::vector<std::size_t> prompts;
  for (std::size_t k = 0; k < ll; ++k) prompts.push_back(loc + k);
  const sslprop::PropagationRequest req{
      sslprop::VoxelVolume(sslprop::Shape{ll + us.depth, us.rows, us.cols}, unl.spacing(), std::move(frames)), prompts,
      lab.mask};
  const auto logits = backend.propagate(req);
  std::vector<float> out;
  for (std::size_t t = 0; t < ll + us.depth; ++t) {
    if (t >= loc && t < loc + ll) continue;
    for (std::size_t i = 0; i < plane; ++i) {
      const double l = logits.data()[t * plane + i];
      out.push_back(static_cast<float>(1.0 / (1.0 + std::exp(-l))));
    }
  }
  return out;
}

inline std::vector<float> ensemble(const sslprop::VoxelVolume& unl, const std::vector<LabelledPair>& labelled,
                                   const sslprop::FrozenSegmenter& backend, std::size_t r, std::uint64_t case_seed) {
  std::vector<float> sum(unl.shape().voxels(), 0.0f);
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    for (std::size_t loc : ref_plan(unl.shape().depth, r, ref_derive(case_seed, i))) {
      const auto run = single_run(unl, labelled[i], loc, backend);
      for (std::size_t v = 0; v < sum.size(); ++v) sum[v] += run[v];
    }
  }
  const float runs = static_cast<float>(r * labelled.size());
  for (auto& s : sum) s = std::min(s / runs, 1.0f);
  return sum;
}

}  // namespace oracle
