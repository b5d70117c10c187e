#pragma once

// Training-free few-shot pseudo labelling. Every labelled volume is spliced
// into the unlabelled volume at R sampled locations; the frozen segmenter
// propagates the labelled masks through the combined sequence, and the
// sigmoid maps of the unlabelled frames are averaged over all R * M runs and
// thresholded.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sslprop/composition.hpp"
#include "sslprop/dataset.hpp"
#include "sslprop/error.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/parallel.hpp"
#include "sslprop/resize.hpp"
#include "sslprop/segmenter.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/store.hpp"

namespace sslprop {

struct TffsConfig {
  std::size_t insertions = 4;  // R
  float threshold = 0.5f;
  std::uint64_t seed = 0;
  std::optional<InPlaneSize> working_size;  // nullopt: native resolution

  void validate() const {
    if (insertions < 1) fail(ErrorCode::ConfigError, "tffs: R must be >= 1");
    if (!(threshold > 0.0f && threshold < 1.0f)) fail(ErrorCode::ConfigError, "tffs: threshold must lie in (0, 1)");
    if (working_size && (working_size->rows < 1 || working_size->cols < 1)) {
      fail(ErrorCode::ConfigError, "tffs: working size must be >= 1x1");
    }
  }
};

struct LabelledVolume {
  VoxelVolume image;
  BinaryMask mask;
};

struct PseudoLabel {
  ProbVolume probs;
  BinaryMask mask;
};

/// Seed of the insertion plan for labelled volume i of a case.
constexpr std::uint64_t insertion_plan_seed(std::uint64_t case_seed, std::size_t labelled_index) noexcept {
  return derive_seed(case_seed, labelled_index);
}

/// One propagation run: compose, propagate, sigmoid, keep unlabelled frames.
inline ProbVolume single_run_probs(const VoxelVolume& unlabelled, const LabelledVolume& labelled,
                                   std::size_t location, const FrozenSegmenter& backend) {
  const auto seq = compose_insert(labelled.image, labelled.mask, unlabelled, location);
  const auto logits = backend.propagate(PropagationRequest::from(seq));
  if (logits.shape() != seq.frames.shape()) {
    fail(ErrorCode::BackendFailure, "backend returned logits of shape " + to_string(logits.shape()) +
                                        " for a sequence of shape " + to_string(seq.frames.shape()));
  }
  return extract_unlabelled(sigmoid(logits), seq);
}

/// Ensemble pseudo label of one unlabelled volume. cfg.seed is the case seed.
/// Runs are accumulated labelled-outer, insertion-inner with left-to-right
/// f32 additions, then divided by R * M.
inline PseudoLabel pseudo_label_volume(const VoxelVolume& unlabelled, const std::vector<LabelledVolume>& labelled,
                                       const FrozenSegmenter& backend, const TffsConfig& cfg) {
  cfg.validate();
  if (labelled.empty()) fail(ErrorCode::EmptyLabelledSet, "at least one labelled volume is required");
  const auto& native = unlabelled.shape();
  const InPlaneSize work = cfg.working_size.value_or(InPlaneSize{native.rows, native.cols});
  const VoxelVolume query = resize_inplane(unlabelled, work);

  std::vector<float> sum(query.shape().voxels(), 0.0f);
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    const LabelledVolume support{resize_inplane(labelled[i].image, work), resize_inplane(labelled[i].mask, work)};
    const auto plan = sample_insertion_plan(native.depth, cfg.insertions, insertion_plan_seed(cfg.seed, i));
    for (std::size_t r = 0; r < plan.locations.size(); ++r) {
      ProbVolume run = [&] {
        try {
          return single_run_probs(query, support, plan.locations[r], backend);
        } catch (const Error& e) {
          fail(e.code() == ErrorCode::Timeout ? ErrorCode::Timeout : ErrorCode::BackendFailure,
               "labelled " + std::to_string(i) + ", insertion " + std::to_string(r) + ": " + e.detail());
        }
      }();
      const auto p = run.data();
      for (std::size_t v = 0; v < sum.size(); ++v) sum[v] += p[v];
    }
  }
  const auto runs = static_cast<float>(cfg.insertions * labelled.size());
  for (auto& s : sum) s = std::min(s / runs, 1.0f);

  ProbVolume averaged(query.shape(), unlabelled.spacing(), std::move(sum));
  ProbVolume probs = resize_inplane(averaged, InPlaneSize{native.rows, native.cols});
  BinaryMask mask = threshold_probs(probs, cfg.threshold);
  return PseudoLabel{std::move(probs), std::move(mask)};
}

inline std::vector<LabelledVolume> load_labelled(const DatasetManifest& manifest) {
  std::vector<LabelledVolume> out;
  out.reserve(manifest.labelled.size());
  for (const auto& c : manifest.labelled) {
    out.push_back({load_volume<IntensityKind>(c.image), load_volume<MaskKind>(c.mask)});
    require_same_shape(out.back().image, out.back().mask, "labelled case '" + c.id + "'");
  }
  return out;
}

/// Seed of an unlabelled case: base XOR SplitMix64(ordinal), the ordinal
/// being the case's rank among the sorted unlabelled ids.
inline std::map<std::string, std::uint64_t> case_seeds(const DatasetManifest& manifest, std::uint64_t base) {
  auto ids = manifest.unlabelled_ids();
  std::sort(ids.begin(), ids.end());
  std::map<std::string, std::uint64_t> seeds;
  for (std::size_t n = 0; n < ids.size(); ++n) seeds.emplace(ids[n], derive_seed(base, n));
  return seeds;
}

struct TffsCaseSummary {
  std::string id;
  std::size_t foreground_voxels = 0;
};

using TffsProgress = std::function<void(const std::string& id, std::size_t done, std::size_t total)>;

/// Pseudo-label initialization: commits snapshot 0 (masks plus probability
/// maps) of an empty store. Cases are independent; if any case fails nothing
/// is committed and the error names every failed case.
inline std::vector<TffsCaseSummary> pseudo_label_dataset(const DatasetManifest& manifest,
                                                         const FrozenSegmenter& backend, const TffsConfig& cfg,
                                                         const PseudoLabelStore& store, std::size_t workers = 1,
                                                         const TffsProgress& progress = {}) {
  cfg.validate();
  if (store.iteration_count() != 0) {
    fail(ErrorCode::StoreError, store.root().string() + " already holds pseudo-label snapshots");
  }
  const auto labelled = load_labelled(manifest);
  const auto seeds = case_seeds(manifest, cfg.seed);
  std::vector<std::string> ids;
  for (const auto& [id, seed] : seeds) ids.push_back(id);

  std::vector<std::optional<PseudoLabel>> results(ids.size());
  std::vector<std::optional<Error>> failures(ids.size());
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(ids.size(), workers, [&](std::size_t n) {
    const auto& id = ids[n];
    try {
      TffsConfig case_cfg = cfg;
      case_cfg.seed = seeds.at(id);
      const auto image = load_volume<IntensityKind>(manifest.unlabelled_case(id).image);
      results[n] = pseudo_label_volume(image, labelled, backend, case_cfg);
    } catch (const Error& e) {
      failures[n] = Error(e.code(), "case '" + id + "': " + e.detail());
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(id, ++done, ids.size());
    }
  });

  std::string message;
  std::optional<ErrorCode> first;
  for (const auto& f : failures) {
    if (!f) continue;
    if (!first) first = f->code();
    message += (message.empty() ? "" : "; ") + f->detail();
  }
  if (first) fail(*first, message);

  std::map<std::string, BinaryMask> masks;
  std::map<std::string, ProbVolume> probs;
  std::vector<TffsCaseSummary> summary;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    summary.push_back({ids[n], count_foreground(results[n]->mask)});
    masks.emplace(ids[n], std::move(results[n]->mask));
    probs.emplace(ids[n], std::move(results[n]->probs));
  }
  store.write_iteration(0, masks, &probs);
  return summary;
}

}  // namespace sslprop
