#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "sslprop/reference_backends.hpp"
#include "sslprop/synthetic.hpp"
#include "sslprop/tffs.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"
#include "support/tffs_oracle.hpp"

using namespace sslprop;

namespace {

class ZeroLogits final : public FrozenSegmenter {
 public:
  LogitSequence propagate(const PropagationRequest& req) const override {
    return LogitSequence::filled(req.frames.shape(), req.frames.spacing(), 0.0f);
  }
};

class Failing final : public FrozenSegmenter {
 public:
  LogitSequence propagate(const PropagationRequest&) const override {
    fail(ErrorCode::BackendFailure, "scripted failure");
  }
};

/// Fails only for unlabelled volumes whose first voxel is negative.
class FailsOnNegative final : public FrozenSegmenter {
 public:
  LogitSequence propagate(const PropagationRequest& req) const override {
    if (req.prompt_frames.front() > 0 && req.frames.data()[0] < 0.0f) fail(ErrorCode::BackendFailure, "negative");
    return LogitSequence::filled(req.frames.shape(), req.frames.spacing(), 1.0f);
  }
};

std::vector<LabelledVolume> to_labelled(const std::vector<oracle::LabelledPair>& pairs) {
  std::vector<LabelledVolume> out;
  for (const auto& p : pairs) out.push_back({p.image, p.mask});
  return out;
}

std::vector<oracle::LabelledPair> random_labelled(std::mt19937_64& rng, std::size_t m, std::size_t depth) {
  std::vector<oracle::LabelledPair> out;
  for (std::size_t i = 0; i < m; ++i) {
    const Shape s{depth + i, 4, 5};
    out.push_back({oracle::random_volume(rng, s), oracle::random_mask(rng, s, Spacing{1, 1, 1}, 0.4)});
  }
  return out;
}

SynthSpec small_spec(std::size_t n) {
  SynthSpec s;
  s.labelled = 2;
  s.unlabelled = n;
  s.shape = Shape{8, 16, 16};
  s.radius_range = {4.0, 6.0};
  s.center_jitter = 1.0;
  s.drift = {0.2, 0.1};
  s.seed = 3;
  return s;
}

}  // namespace

TEST(Tffs, SingleRunEqualsItsOwnSigmoid) {
  std::mt19937_64 rng(1);
  const auto labelled = random_labelled(rng, 1, 3);
  const auto unl = oracle::random_volume(rng, Shape{5, 4, 5});
  const NearestPromptPropagation backend;
  TffsConfig cfg;
  cfg.insertions = 1;
  cfg.seed = 99;
  const auto result = pseudo_label_volume(unl, to_labelled(labelled), backend, cfg);
  const auto loc = oracle::ref_plan(5, 1, oracle::ref_derive(99, 0)).front();
  EXPECT_EQ(result.probs.values(), oracle::single_run(unl, labelled[0], loc, backend));
}

TEST(Tffs, TwoByTwoEqualsBruteForce) {
  std::mt19937_64 rng(2);
  const auto labelled = random_labelled(rng, 2, 3);
  const auto unl = oracle::random_volume(rng, Shape{6, 4, 5});
  const NearestPromptPropagation backend;
  TffsConfig cfg;
  cfg.insertions = 2;
  cfg.seed = 5;
  const auto result = pseudo_label_volume(unl, to_labelled(labelled), backend, cfg);
  EXPECT_EQ(result.probs.values(), oracle::ensemble(unl, labelled, backend, 2, 5));
  EXPECT_TRUE(bitwise_equal(result.mask, threshold_probs(result.probs, 0.5f)));
}

TEST(Tffs, ZeroLogitsGiveHalfAndForegroundAtBoundary) {
  std::mt19937_64 rng(3);
  const auto labelled = random_labelled(rng, 2, 2);
  const auto unl = oracle::random_volume(rng, Shape{4, 4, 5});
  TffsConfig cfg;
  cfg.insertions = 3;
  const auto result = pseudo_label_volume(unl, to_labelled(labelled), ZeroLogits(), cfg);
  for (float p : result.probs.data()) EXPECT_EQ(p, 0.5f);
  EXPECT_EQ(count_foreground(result.mask), result.mask.data().size());
}

TEST(Tffs, WorkingSizeResizesAndRestores) {
  std::mt19937_64 rng(4);
  const auto labelled = random_labelled(rng, 1, 3);
  const auto unl = oracle::random_volume(rng, Shape{5, 4, 5});
  TffsConfig cfg;
  cfg.working_size = InPlaneSize{8, 8};
  const auto result = pseudo_label_volume(unl, to_labelled(labelled), NearestPromptPropagation(), cfg);
  EXPECT_EQ(result.probs.shape(), unl.shape());
  EXPECT_EQ(result.mask.shape(), unl.shape());
}

TEST(Tffs, Errors) {
  std::mt19937_64 rng(5);
  const auto unl = oracle::random_volume(rng, Shape{5, 4, 5});
  EXPECT_ERROR_CODE(pseudo_label_volume(unl, {}, NearestPromptPropagation(), TffsConfig{}), ErrorCode::EmptyLabelledSet);
  const auto labelled = to_labelled(random_labelled(rng, 1, 2));
  TffsConfig bad;
  bad.insertions = 0;
  EXPECT_ERROR_CODE(pseudo_label_volume(unl, labelled, NearestPromptPropagation(), bad), ErrorCode::ConfigError);
  bad = TffsConfig{};
  bad.threshold = 1.0f;
  EXPECT_ERROR_CODE(pseudo_label_volume(unl, labelled, NearestPromptPropagation(), bad), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(pseudo_label_volume(unl, labelled, Failing(), TffsConfig{}), ErrorCode::BackendFailure);
}

TEST(TffsProperty, EnsembleLinearityAndRanges) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng() % 3;
    const std::size_t r = 1 + rng() % 5;
    const auto labelled = random_labelled(rng, m, 1 + rng() % 4);
    const auto unl = oracle::random_volume(rng, Shape{1 + rng() % 7, 4, 5});
    const NearestPromptPropagation backend(NearestPromptPropagation::Options{0.5 + 0.5 * (rng() % 100) / 100.0, 1e-4, 10});
    TffsConfig cfg;
    cfg.insertions = r;
    cfg.seed = rng();
    const auto result = pseudo_label_volume(unl, to_labelled(labelled), backend, cfg);
    ASSERT_EQ(result.probs.values(), oracle::ensemble(unl, labelled, backend, r, cfg.seed));
    for (float p : result.probs.data()) {
      ASSERT_GE(p, 0.0f);
      ASSERT_LE(p, 1.0f);
    }
  }
}

TEST(TffsProperty, RaisingThresholdNeverGrowsForeground) {
  std::mt19937_64 rng(7);
  const auto labelled = random_labelled(rng, 2, 3);
  const auto unl = oracle::random_volume(rng, Shape{6, 4, 5});
  TffsConfig cfg;
  cfg.insertions = 4;
  const auto probs = pseudo_label_volume(unl, to_labelled(labelled), NearestPromptPropagation(), cfg).probs;
  std::size_t previous = probs.data().size() + 1;
  for (float t = 0.05f; t < 1.0f; t += 0.05f) {
    const auto mask = threshold_probs(probs, t);
    const auto now = count_foreground(mask);
    ASSERT_LE(now, previous);
    previous = now;
  }
}

TEST(TffsDataset, CoverageAndOrderIndependence) {
  oracle::TempDir dir("tffs");
  const auto ds = generate(small_spec(3), dir / "data");
  PseudoLabelStore store(dir / "run_a");
  TffsConfig cfg;
  cfg.insertions = 2;
  cfg.seed = 17;
  const auto summary = pseudo_label_dataset(ds.manifest, NearestPromptPropagation(), cfg, store);
  EXPECT_EQ(summary.size(), 3u);
  EXPECT_EQ(store.iteration_count(), 1u);
  EXPECT_EQ(store.case_ids(0), (std::vector<std::string>{"unl_000", "unl_001", "unl_002"}));
  EXPECT_TRUE(store.load_probs(0, "unl_001").has_value());

  auto shuffled = ds.manifest;
  std::reverse(shuffled.unlabelled.begin(), shuffled.unlabelled.end());
  PseudoLabelStore other(dir / "run_b");
  pseudo_label_dataset(shuffled, NearestPromptPropagation(), cfg, other, 3);
  for (const auto& id : store.case_ids(0)) {
    EXPECT_TRUE(bitwise_equal(store.load_mask(0, id), other.load_mask(0, id)));
    EXPECT_TRUE(bitwise_equal(*store.load_probs(0, id), *other.load_probs(0, id)));
  }
  EXPECT_ERROR_CODE(pseudo_label_dataset(ds.manifest, NearestPromptPropagation(), cfg, store), ErrorCode::StoreError);
}

TEST(TffsDataset, PerCaseSeedsFollowSortedRank) {
  oracle::TempDir dir("tffs");
  const auto ds = generate(small_spec(3), dir / "data");
  const auto seeds = case_seeds(ds.manifest, 123);
  EXPECT_EQ(seeds.at("unl_000"), oracle::ref_derive(123, 0));
  EXPECT_EQ(seeds.at("unl_002"), oracle::ref_derive(123, 2));

  // The stored map for one case equals the brute-force ensemble under its seed.
  PseudoLabelStore store(dir / "run");
  TffsConfig cfg;
  cfg.insertions = 3;
  cfg.seed = 123;
  pseudo_label_dataset(ds.manifest, NearestPromptPropagation(), cfg, store);
  std::vector<oracle::LabelledPair> labelled;
  for (const auto& c : ds.manifest.labelled) {
    labelled.push_back({load_volume<IntensityKind>(c.image), load_volume<MaskKind>(c.mask)});
  }
  const auto unl = load_volume<IntensityKind>(ds.manifest.unlabelled_case("unl_002").image);
  EXPECT_EQ(store.load_probs(0, "unl_002")->values(),
            oracle::ensemble(unl, labelled, NearestPromptPropagation(), 3, oracle::ref_derive(123, 2)));
}

TEST(TffsDataset, FailuresNameEveryCaseAndCommitNothing) {
  oracle::TempDir dir("tffs");
  auto ds = generate(small_spec(3), dir / "data");
  // Make two cases start with a negative voxel.
  for (const char* id : {"unl_000", "unl_002"}) {
    const auto path = ds.manifest.unlabelled_case(id).image;
    auto values = load_volume<IntensityKind>(path).values();
    values[0] = -1.0f;
    save_volume(VoxelVolume(Shape{8, 16, 16}, Spacing{1, 1, 1}, values), path);
  }
  PseudoLabelStore store(dir / "run");
  try {
    pseudo_label_dataset(ds.manifest, FailsOnNegative(), TffsConfig{}, store, 2);
    FAIL() << "expected BackendFailure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendFailure);
    const std::string what = e.what();
    EXPECT_NE(what.find("unl_000"), std::string::npos);
    EXPECT_NE(what.find("unl_002"), std::string::npos);
    EXPECT_EQ(what.find("unl_001"), std::string::npos);
  }
  EXPECT_EQ(store.iteration_count(), 0u);
}

TEST(TffsDataset, WorkerCountDoesNotChangeBytes) {
  oracle::TempDir dir("tffs");
  const auto ds = generate(small_spec(5), dir / "data");
  TffsConfig cfg;
  cfg.seed = 8;
  PseudoLabelStore one(dir / "w1");
  PseudoLabelStore four(dir / "w4");
  pseudo_label_dataset(ds.manifest, NearestPromptPropagation(), cfg, one, 1);
  pseudo_label_dataset(ds.manifest, NearestPromptPropagation(), cfg, four, 4);
  for (const auto& id : one.case_ids(0)) {
    EXPECT_TRUE(bitwise_equal(*one.load_probs(0, id), *four.load_probs(0, id)));
  }
}
