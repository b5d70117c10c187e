#pragma once

// Deterministic built-in backends. NearestPromptPropagation is a closed-form
// stand-in for a memory-propagating video segmenter; HistogramClassifier is
// an intensity-histogram Bayes classifier standing in for a trained network.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/segmenter.hpp"

namespace sslprop {

/// p(t) = eps + (1 - 2 eps) * decay^d * m_{t*}, where t* is the prompt frame
/// nearest to t (lower index on ties, either direction) and d = |t - t*|.
/// Emits clamped logits of p.
class NearestPromptPropagation final : public FrozenSegmenter {
 public:
  struct Options {
    double decay = 0.9;
    double epsilon = 1e-4;
    double logit_limit = 10.0;
  };

  NearestPromptPropagation() : NearestPromptPropagation(Options{}) {}
  explicit NearestPromptPropagation(Options options) : options_(options) {
    if (!(options_.decay > 0.0 && options_.decay <= 1.0)) {
      fail(ErrorCode::ConfigError, "decay must lie in (0, 1]");
    }
    if (!(options_.epsilon > 0.0 && options_.epsilon < 0.5)) {
      fail(ErrorCode::ConfigError, "epsilon must lie in (0, 0.5)");
    }
  }

  const Options& options() const noexcept { return options_; }

  /// Foreground probability at a prompted voxel, d frames from its prompt.
  double probability(std::size_t distance, bool foreground) const {
    const double m = foreground ? 1.0 : 0.0;
    return options_.epsilon +
           (1.0 - 2.0 * options_.epsilon) * std::pow(options_.decay, static_cast<double>(distance)) * m;
  }

  /// Index into req.prompt_frames of the prompt nearest to `frame`.
  static std::size_t nearest_prompt(const std::vector<std::size_t>& prompts, std::size_t frame) {
    std::size_t best = 0;
    std::size_t best_distance = std::numeric_limits<std::size_t>::max();
    for (std::size_t k = 0; k < prompts.size(); ++k) {
      const std::size_t d = prompts[k] > frame ? prompts[k] - frame : frame - prompts[k];
      if (d < best_distance) {  // strict: ascending prompts keep the lower index on ties
        best = k;
        best_distance = d;
      }
    }
    return best;
  }

  LogitSequence propagate(const PropagationRequest& req) const override {
    req.validate();
    const auto& shape = req.frames.shape();
    const std::size_t plane = shape.frame_voxels();
    const float background = clamped_logit(probability(0, false), options_.logit_limit);
    std::vector<float> logits(shape.voxels());
    for (std::size_t t = 0; t < shape.depth; ++t) {
      const std::size_t k = nearest_prompt(req.prompt_frames, t);
      const std::size_t p = req.prompt_frames[k];
      const std::size_t d = p > t ? p - t : t - p;
      const float foreground = clamped_logit(probability(d, true), options_.logit_limit);
      const auto prompt = req.prompt_masks.frame(k);
      for (std::size_t i = 0; i < plane; ++i) {
        logits[t * plane + i] = prompt[i] ? foreground : background;
      }
    }
    return LogitSequence(shape, req.frames.spacing(), std::move(logits));
  }

 private:
  Options options_;
};

/// floor((v - lo) / (hi - lo) * bins), clamped to [0, bins). A degenerate
/// range maps everything to bin 0.
inline std::size_t histogram_bin(double v, double lo, double hi, std::size_t bins) noexcept {
  if (!(hi > lo)) return 0;
  const double scaled = (v - lo) / (hi - lo) * static_cast<double>(bins);
  if (!(scaled > 0.0)) return 0;
  if (scaled >= static_cast<double>(bins)) return bins - 1;
  return std::min(static_cast<std::size_t>(std::floor(scaled)), bins - 1);
}

/// Bin counts of a fitted HistogramClassifier. Bins span [lo, hi] of the
/// training intensities; intensities outside fall into the boundary bins.
class HistogramModel final : public TrainedModel {
 public:
  HistogramModel() = default;

  HistogramModel(std::filesystem::path location, double lo, double hi, double alpha, double logit_limit,
                 std::vector<std::uint64_t> foreground, std::vector<std::uint64_t> background)
      : location_(std::move(location)),
        lo_(lo),
        hi_(hi),
        alpha_(alpha),
        logit_limit_(logit_limit),
        foreground_(std::move(foreground)),
        background_(std::move(background)) {
    if (foreground_.empty() || foreground_.size() != background_.size()) {
      fail(ErrorCode::UntrainedModel, "histogram model with inconsistent bins");
    }
    const double p_min = 1.0 / (1.0 + std::exp(logit_limit_));
    const double p_max = 1.0 / (1.0 + std::exp(-logit_limit_));
    table_.resize(foreground_.size());
    for (std::size_t b = 0; b < table_.size(); ++b) {
      const double fg = static_cast<double>(foreground_[b]);
      const double n = fg + static_cast<double>(background_[b]);
      table_[b] = static_cast<float>(std::clamp((fg + alpha_) / (n + 2.0 * alpha_), p_min, p_max));
    }
  }

  bool trained() const noexcept { return !table_.empty(); }
  std::size_t bins() const noexcept { return table_.size(); }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  const std::vector<std::uint64_t>& foreground_counts() const noexcept { return foreground_; }
  const std::vector<std::uint64_t>& background_counts() const noexcept { return background_; }

  /// p(fg | bin), Laplace-smoothed and clamped to [sigmoid(-L), sigmoid(L)].
  float bin_probability(std::size_t bin) const { return table_.at(bin); }

  std::size_t bin_of(double intensity) const noexcept {
    return histogram_bin(intensity, lo_, hi_, table_.size());
  }

  ProbVolume predict(const VoxelVolume& v) const override {
    if (!trained()) fail(ErrorCode::UntrainedModel, "histogram model has not been fitted");
    std::vector<float> p(v.data().size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = table_[bin_of(v.data()[i])];
    return ProbVolume(v.shape(), v.spacing(), std::move(p));
  }

  const std::filesystem::path& location() const noexcept override { return location_; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "histogram";
    j["bins"] = table_.size();
    j["lo"] = lo_;
    j["hi"] = hi_;
    j["alpha"] = alpha_;
    j["logit_limit"] = logit_limit_;
    j["foreground"] = foreground_;
    j["background"] = background_;
    return j;
  }

 private:
  std::filesystem::path location_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  double alpha_ = 1.0;
  double logit_limit_ = 10.0;
  std::vector<std::uint64_t> foreground_;
  std::vector<std::uint64_t> background_;
  std::vector<float> table_;
};

/// Intensity-histogram Bayes classifier: B bins over the training intensity
/// range, Laplace smoothing alpha, probabilities clamped at logit +/- L.
class HistogramClassifier final : public TrainableSegmenter {
 public:
  struct Options {
    std::size_t bins = 64;
    double alpha = 1.0;
    double logit_limit = 10.0;
  };

  static constexpr const char* kModelFile = "model.json";

  HistogramClassifier() : HistogramClassifier(Options{}) {}
  explicit HistogramClassifier(Options options) : options_(options) {
    if (options_.bins < 1) fail(ErrorCode::ConfigError, "bins must be >= 1");
    if (!(options_.alpha > 0.0)) fail(ErrorCode::ConfigError, "alpha must be > 0");
  }

  const Options& options() const noexcept { return options_; }

  /// Fits without persisting; `fit` wraps this and writes model.json.
  HistogramModel train(const TrainingSet& ts, std::filesystem::path location = {}) const {
    validate_training_set(ts);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::uint64_t total_foreground = 0;
    for (const auto& pair : ts) {
      for (float v : pair.image->data()) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
      }
      total_foreground += count_foreground(*pair.mask);
    }
    if (total_foreground == 0) {
      fail(ErrorCode::DegenerateTrainingSet, "every training mask is background; p(fg|bin) is undefined");
    }
    std::vector<std::uint64_t> fg(options_.bins, 0);
    std::vector<std::uint64_t> bg(options_.bins, 0);
    for (const auto& pair : ts) {
      const auto image = pair.image->data();
      const auto mask = pair.mask->data();
      for (std::size_t i = 0; i < image.size(); ++i) {
        auto& counts = mask[i] ? fg : bg;
        ++counts[histogram_bin(image[i], lo, hi, options_.bins)];
      }
    }
    return HistogramModel(std::move(location), lo, hi, options_.alpha, options_.logit_limit, std::move(fg),
                          std::move(bg));
  }

  ModelHandle fit(const TrainingSet& ts, const std::filesystem::path& model_dir) const override {
    auto model = train(ts, model_dir);
    std::filesystem::create_directories(model_dir);
    std::ofstream out(model_dir / kModelFile, std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write model to " + model_dir.string());
    out << model.to_json().dump() << "\n";
    out.close();
    if (!out) fail(ErrorCode::IoFailure, "cannot write model to " + model_dir.string());
    return std::make_shared<HistogramModel>(std::move(model));
  }

  ModelHandle load(const std::filesystem::path& model_dir) const override {
    const auto path = model_dir / kModelFile;
    if (!std::filesystem::is_regular_file(path)) {
      fail(ErrorCode::UntrainedModel, "no histogram model at " + path.string());
    }
    try {
      std::ifstream in(path);
      const auto j = nlohmann::json::parse(in);
      if (j.at("kind") != "histogram") fail(ErrorCode::UntrainedModel, path.string() + " is not a histogram model");
      auto fg = j.at("foreground").get<std::vector<std::uint64_t>>();
      auto bg = j.at("background").get<std::vector<std::uint64_t>>();
      if (fg.size() != j.at("bins").get<std::size_t>()) {
        fail(ErrorCode::UntrainedModel, path.string() + ": bin count mismatch");
      }
      return std::make_shared<HistogramModel>(model_dir, j.at("lo").get<double>(), j.at("hi").get<double>(),
                                              j.at("alpha").get<double>(), j.at("logit_limit").get<double>(),
                                              std::move(fg), std::move(bg));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::UntrainedModel, path.string() + ": " + e.what());
    }
  }

 private:
  Options options_;
};

}  // namespace sslprop
