#pragma once

// Backend contracts. A FrozenSegmenter is the promptable frame-propagation
// model: it sees a composed sequence plus mask prompts and returns per-frame
// logits. A TrainableSegmenter is fitted on (image, mask) pairs and yields a
// TrainedModel that predicts per-voxel foreground probabilities.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sslprop/composition.hpp"
#include "sslprop/error.hpp"
#include "sslprop/volume.hpp"

namespace sslprop {

struct LogitKind {
  using value_type = float;
  static constexpr std::string_view name = "LogitSequence";
  static constexpr std::string_view dtype = "f32";
  static bool valid(float v) noexcept { return std::isfinite(v); }
};

using LogitSequence = Grid<LogitKind>;

inline float sigmoid(float logit) noexcept {
  return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logit))));
}

inline ProbVolume sigmoid(const LogitSequence& logits) {
  std::vector<float> p(logits.data().size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(logits.data()[i]);
  return ProbVolume(logits.shape(), logits.spacing(), std::move(p));
}

/// log(p / (1 - p)) clamped to [-limit, limit].
inline float clamped_logit(double p, double limit) noexcept {
  const double l = std::log(p) - std::log1p(-p);
  return static_cast<float>(std::clamp(l, -limit, limit));
}

struct PropagationRequest {
  VoxelVolume frames;
  std::vector<std::size_t> prompt_frames;  // ascending
  BinaryMask prompt_masks;                 // frame k is the prompt for prompt_frames[k]

  static PropagationRequest from(const ComposedSequence& seq) {
    return PropagationRequest{seq.frames, seq.prompt_frames(), seq.prompt_masks};
  }

  void validate() const {
    if (prompt_frames.empty()) fail(ErrorCode::InvariantViolation, "propagation request has no prompt frames");
    const auto& fs = frames.shape();
    const auto& ms = prompt_masks.shape();
    if (ms.depth != prompt_frames.size() || ms.rows != fs.rows || ms.cols != fs.cols) {
      fail(ErrorCode::ShapeMismatch, "prompt masks " + to_string(ms) + " for " +
                                         std::to_string(prompt_frames.size()) + " prompts on frames " + to_string(fs));
    }
    for (std::size_t k = 0; k < prompt_frames.size(); ++k) {
      if (prompt_frames[k] >= fs.depth) fail(ErrorCode::InvariantViolation, "prompt frame out of range");
      if (k > 0 && prompt_frames[k] <= prompt_frames[k - 1]) {
        fail(ErrorCode::InvariantViolation, "prompt frames must be strictly ascending");
      }
    }
  }
};

class FrozenSegmenter {
 public:
  virtual ~FrozenSegmenter() = default;
  /// Logits for every frame of req.frames, prompt frames included.
  virtual LogitSequence propagate(const PropagationRequest& req) const = 0;
};

struct TrainingPair {
  std::shared_ptr<const VoxelVolume> image;
  std::shared_ptr<const BinaryMask> mask;
};

/// D = D^l together with the current pseudo-labelled unlabelled cases.
using TrainingSet = std::vector<TrainingPair>;

inline void validate_training_set(const TrainingSet& ts) {
  if (ts.empty()) fail(ErrorCode::DegenerateTrainingSet, "training set is empty");
  for (const auto& pair : ts) {
    if (!pair.image || !pair.mask) fail(ErrorCode::DegenerateTrainingSet, "training pair is incomplete");
    require_same_shape(*pair.image, *pair.mask, "training pair");
  }
}

class TrainedModel {
 public:
  virtual ~TrainedModel() = default;
  virtual ProbVolume predict(const VoxelVolume& v) const = 0;
  /// Directory the model is persisted in.
  virtual const std::filesystem::path& location() const noexcept = 0;
};

using ModelHandle = std::shared_ptr<const TrainedModel>;

class TrainableSegmenter {
 public:
  virtual ~TrainableSegmenter() = default;
  /// Trains a fresh model and persists it under model_dir.
  virtual ModelHandle fit(const TrainingSet& ts, const std::filesystem::path& model_dir) const = 0;
  /// Reopens a model persisted by fit.
  virtual ModelHandle load(const std::filesystem::path& model_dir) const = 0;
};

}  // namespace sslprop
