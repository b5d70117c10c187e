#pragma once

// Iterative k-fold pseudo-label refinement. Each iteration trains k fresh
// models; model j sees the labelled set plus the pseudo-labelled cases
// outside fold j and re-labels the cases in fold j, so no case is ever
// re-labelled by a model trained on its own pseudo label.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/dataset.hpp"
#include "sslprop/error.hpp"
#include "sslprop/metrics.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/parallel.hpp"
#include "sslprop/segmenter.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/store.hpp"

namespace sslprop {

struct FslConfig {
  std::size_t folds = 5;
  std::size_t max_iterations = 3;
  std::optional<double> early_stop_dice = 0.995;  // nullopt disables early stopping
  float threshold = 0.5f;
  bool resplit_per_iteration = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (folds < 2) fail(ErrorCode::BadFoldCount, "fsl: k must be >= 2, got " + std::to_string(folds));
    if (max_iterations < 1) fail(ErrorCode::ConfigError, "fsl: max_iterations must be >= 1");
    if (early_stop_dice && !(*early_stop_dice > 0.0 && *early_stop_dice <= 1.0)) {
      fail(ErrorCode::ConfigError, "fsl: early_stop_dice must lie in (0, 1]");
    }
    if (!(threshold > 0.0f && threshold < 1.0f)) fail(ErrorCode::ConfigError, "fsl: threshold must lie in (0, 1)");
  }

  /// Folds used by iteration t (1-based).
  FoldAssignment folds_for(const std::vector<std::string>& ids, std::size_t iteration) const {
    return split_folds(ids, folds, resplit_per_iteration ? derive_seed(seed, iteration) : seed);
  }
};

/// <store root>/models/iter_<t>/fold_<j>; iteration t produces snapshot t.
inline std::filesystem::path model_dir(const std::filesystem::path& root, std::size_t iteration, std::size_t fold) {
  return root / "models" / ("iter_" + std::to_string(iteration)) / ("fold_" + std::to_string(fold));
}

/// Images and ground truth, loaded once and shared by every fold.
struct LoadedDataset {
  std::vector<TrainingPair> labelled;
  std::map<std::string, std::shared_ptr<const VoxelVolume>> unlabelled;

  static LoadedDataset load(const DatasetManifest& manifest) {
    LoadedDataset d;
    for (const auto& c : manifest.labelled) {
      auto image = std::make_shared<const VoxelVolume>(load_volume<IntensityKind>(c.image));
      auto mask = std::make_shared<const BinaryMask>(load_volume<MaskKind>(c.mask));
      require_same_shape(*image, *mask, "labelled case '" + c.id + "'");
      d.labelled.push_back({std::move(image), std::move(mask)});
    }
    for (const auto& c : manifest.unlabelled) {
      d.unlabelled.emplace(c.id, std::make_shared<const VoxelVolume>(load_volume<IntensityKind>(c.image)));
    }
    return d;
  }
};

struct IterationResult {
  std::size_t iteration = 0;  // index of the snapshot produced
  FoldAssignment folds;
  std::map<std::string, std::size_t> predicted_by;  // case -> fold whose model re-labelled it
  std::vector<ModelHandle> models;                  // indexed by fold
  std::map<std::string, BinaryMask> masks;
};

/// Produces snapshot i+1 from snapshot i and commits it to the store.
inline IterationResult refine_iteration(const LoadedDataset& data, const PseudoLabelStore& store, std::size_t i,
                                        const FoldAssignment& folds, const TrainableSegmenter& backend,
                                        const FslConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  if (folds.k != cfg.folds) fail(ErrorCode::BadFoldCount, "fold assignment k differs from config");
  auto current = store.load_snapshot(i);

  std::vector<std::string> ids;
  for (const auto& [id, image] : data.unlabelled) ids.push_back(id);
  {
    std::vector<std::string> have;
    for (const auto& [id, m] : current) have.push_back(id);
    if (have != ids) fail(ErrorCode::CoverageFailure, "snapshot " + std::to_string(i) + " does not cover the unlabelled set");
    std::vector<std::string> assigned;
    for (const auto& [id, f] : folds.fold_of) {
      if (f >= folds.k) fail(ErrorCode::BadFoldCount, "case '" + id + "' assigned to fold out of range");
      assigned.push_back(id);
    }
    if (assigned != ids) fail(ErrorCode::CoverageFailure, "fold assignment does not cover the unlabelled set");
  }
  std::map<std::string, std::shared_ptr<const BinaryMask>> labels;
  for (auto& [id, m] : current) {
    require_same_shape(*data.unlabelled.at(id), m, "pseudo label '" + id + "'");
    labels.emplace(id, std::make_shared<const BinaryMask>(std::move(m)));
  }

  const std::size_t next = i + 1;
  std::vector<ModelHandle> models(folds.k);
  std::vector<std::vector<std::pair<std::string, BinaryMask>>> predictions(folds.k);
  parallel_for(folds.k, workers, [&](std::size_t j) {
    TrainingSet ts = data.labelled;
    for (const auto& id : ids) {
      if (folds.fold_of.at(id) != j) ts.push_back({data.unlabelled.at(id), labels.at(id)});
    }
    const auto dir = model_dir(store.root(), next, j);
    std::filesystem::remove_all(dir);
    try {
      models[j] = backend.fit(ts, dir);
      for (const auto& id : folds.members(j)) {
        const auto probs = models[j]->predict(*data.unlabelled.at(id));
        require_same_shape(probs, *data.unlabelled.at(id), "prediction for '" + id + "'");
        predictions[j].emplace_back(id, threshold_probs(probs, cfg.threshold));
      }
    } catch (const Error& e) {
      fail(e.code(), "fold " + std::to_string(j) + ": " + e.detail());
    }
  });

  IterationResult result;
  result.iteration = next;
  result.folds = folds;
  result.models = std::move(models);
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    for (auto& [id, mask] : predictions[j]) {
      if (!result.predicted_by.emplace(id, j).second) {
        fail(ErrorCode::CoverageFailure, "case '" + id + "' predicted by more than one fold");
      }
      result.masks.emplace(id, std::move(mask));
    }
  }
  if (result.masks.size() != ids.size()) {
    for (const auto& id : ids) {
      if (!result.masks.contains(id)) fail(ErrorCode::CoverageFailure, "case '" + id + "' was not predicted");
    }
  }
  store.write_iteration(next, result.masks);
  return result;
}

inline IterationResult refine_iteration(const DatasetManifest& manifest, const PseudoLabelStore& store, std::size_t i,
                                        const FoldAssignment& folds, const TrainableSegmenter& backend,
                                        const FslConfig& cfg, std::size_t workers = 1) {
  return refine_iteration(LoadedDataset::load(manifest), store, i, folds, backend, cfg, workers);
}

struct IterationRecord {
  std::size_t iteration = 0;
  FoldAssignment folds;
  double inter_iteration_dice = 0.0;  // mean dice(snapshot t-1, snapshot t)
  std::vector<std::filesystem::path> models;
};

struct RefinementTrace {
  std::vector<IterationRecord> iterations;
  std::string stop_reason;  // "max_iterations" or "converged"
  std::vector<ModelHandle> final_models;

  /// Paths are written relative to `root` so traces of relocated runs compare equal.
  nlohmann::ordered_json to_json(const std::filesystem::path& root, const FslConfig& cfg) const {
    auto rel = [&](const std::filesystem::path& p) { return p.lexically_relative(root).generic_string(); };
    nlohmann::ordered_json j;
    j["k"] = cfg.folds;
    j["max_iterations"] = cfg.max_iterations;
    j["early_stop_dice"] = cfg.early_stop_dice ? nlohmann::ordered_json(*cfg.early_stop_dice) : nlohmann::ordered_json();
    j["threshold"] = cfg.threshold;
    j["resplit_per_iteration"] = cfg.resplit_per_iteration;
    j["stop_reason"] = stop_reason;
    j["iterations"] = nlohmann::ordered_json::array();
    for (const auto& it : iterations) {
      nlohmann::ordered_json e;
      e["iteration"] = it.iteration;
      e["snapshot"] = PseudoLabelStore::iteration_name(it.iteration);
      e["inter_iteration_dice"] = it.inter_iteration_dice;
      e["folds"] = it.folds.fold_of;
      e["models"] = nlohmann::ordered_json::array();
      for (const auto& m : it.models) e["models"].push_back(rel(m));
      j["iterations"].push_back(std::move(e));
    }
    j["final_models"] = iterations.empty() ? "" : rel(iterations.back().models.front().parent_path());
    return j;
  }
};

using FslProgress = std::function<void(const IterationRecord&)>;

/// Runs refinement from snapshot 0, replacing any later snapshots and models
/// left by an earlier run. Stops after max_iterations, or earlier once the
/// mean inter-iteration Dice reaches early_stop_dice.
inline RefinementTrace run_refinement(const DatasetManifest& manifest, const PseudoLabelStore& store,
                                      const TrainableSegmenter& backend, const FslConfig& cfg, std::size_t workers = 1,
                                      const FslProgress& progress = {}) {
  cfg.validate();
  if (store.iteration_count() < 1) {
    fail(ErrorCode::StoreError, "no pseudo-label snapshot 0 in " + store.root().string() + "; run init-pseudo first");
  }
  store.truncate(1);
  std::filesystem::remove_all(store.root() / "models");

  const auto data = LoadedDataset::load(manifest);
  const auto ids = manifest.unlabelled_ids();
  RefinementTrace trace;
  auto previous = store.load_snapshot(0);
  for (std::size_t t = 1; t <= cfg.max_iterations; ++t) {
    auto step = refine_iteration(data, store, t - 1, cfg.folds_for(ids, t), backend, cfg, workers);
    double total = 0.0;
    for (const auto& [id, mask] : step.masks) total += dice(previous.at(id), mask);
    IterationRecord record;
    record.iteration = t;
    record.folds = step.folds;
    record.inter_iteration_dice = total / static_cast<double>(step.masks.size());
    for (const auto& m : step.models) record.models.push_back(m->location());
    trace.iterations.push_back(record);
    trace.final_models = step.models;
    if (progress) progress(record);
    previous = std::move(step.masks);
    if (t < cfg.max_iterations && cfg.early_stop_dice && record.inter_iteration_dice >= *cfg.early_stop_dice) {
      trace.stop_reason = "converged";
      return trace;
    }
  }
  trace.stop_reason = "max_iterations";
  return trace;
}

/// Mean of the fold models' probabilities, summed in fold order.
inline ProbVolume ensemble_probs(const std::vector<ModelHandle>& models, const VoxelVolume& v) {
  if (models.empty()) fail(ErrorCode::UntrainedModel, "no fold models supplied");
  std::vector<float> sum(v.shape().voxels(), 0.0f);
  for (std::size_t j = 0; j < models.size(); ++j) {
    if (!models[j]) fail(ErrorCode::UntrainedModel, "fold model " + std::to_string(j) + " is missing");
    const auto p = models[j]->predict(v);
    require_same_shape(p, v, "fold " + std::to_string(j) + " prediction");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.data()[i];
  }
  const auto k = static_cast<float>(models.size());
  for (auto& s : sum) s = std::min(s / k, 1.0f);
  return ProbVolume(v.shape(), v.spacing(), std::move(sum));
}

inline BinaryMask infer(const std::vector<ModelHandle>& models, const VoxelVolume& v, float threshold) {
  return threshold_probs(ensemble_probs(models, v), threshold);
}

}  // namespace sslprop
