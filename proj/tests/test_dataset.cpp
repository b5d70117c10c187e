#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "sslprop/dataset.hpp"
#include "sslprop/splitmix.hpp"
#include "sslprop/store.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace sslprop;

namespace {

std::vector<std::string> case_names(std::size_t n, const std::string& prefix = "c") {
  std::vector<std::string> ids;
  for (std::size_t i = 1; i <= n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

/// Writes `m` labelled and `n` unlabelled 2x3x3 cases plus a manifest.
fs::path write_dataset(const fs::path& root, std::size_t m, std::size_t n, const std::string& vendor = "A") {
  DatasetManifest manifest;
  for (std::size_t i = 0; i < m; ++i) {
    const std::string id = "lab" + std::to_string(i);
    save_volume(VoxelVolume::filled(Shape{2, 3, 3}, Spacing{1, 1, 1}, 1.0f), root / "img" / id);
    save_volume(BinaryMask::filled(Shape{2, 3, 3}, Spacing{1, 1, 1}, 1), root / "msk" / id);
    manifest.labelled.push_back({id, root / "img" / id, root / "msk" / id, vendor});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "unl" + std::to_string(i);
    save_volume(VoxelVolume::filled(Shape{2, 3, 3}, Spacing{1, 1, 1}, 0.0f), root / "img" / id);
    manifest.unlabelled.push_back({id, root / "img" / id, vendor});
  }
  write_manifest(manifest, root / "manifest.json");
  return root / "manifest.json";
}

}  // namespace

TEST(SplitMix, MatchesPublishedReferenceOutputs) {
  SplitMix64 g(0);
  EXPECT_EQ(g(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(g(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(g(), 0x06c45d188009454fULL);
  EXPECT_EQ(g(), 0xf88bb8a8724c81ecULL);
}

TEST(SplitMix, AgreesWithOracleOnStreamsAndReductions) {
  std::mt19937_64 seeds(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t seed = seeds();
    SplitMix64 lib(seed);
    oracle::RefSplitMix ref{seed};
    for (int i = 0; i < 100; ++i) {
      const std::uint64_t n = 1 + (seeds() % 1000);
      ASSERT_EQ(lib.bounded(n), ref.below(n));
    }
    EXPECT_EQ(derive_seed(seed, static_cast<std::uint64_t>(trial)), oracle::ref_derive(seed, static_cast<std::uint64_t>(trial)));
  }
}

TEST(SplitMix, UnitIsHalfOpen) {
  SplitMix64 g(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = g.unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(SplitMix, GaussianStreamMoments) {
  GaussianStream g(1);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = g();
    ASSERT_TRUE(std::isfinite(x));
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(Manifest, TableScaleVendorManifest) {
  oracle::TempDir dir("manifest");
  const auto m = parse_manifest(write_dataset(dir.path(), 10, 120));
  EXPECT_EQ(m.labelled.size(), 10u);
  EXPECT_EQ(m.unlabelled.size(), 120u);
  EXPECT_EQ(m.unlabelled.front().vendor.value(), "A");
}

TEST(Manifest, WriteParseRoundTripUsesRelativePaths) {
  oracle::TempDir dir("manifest");
  const auto path = write_dataset(dir.path(), 1, 2);
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["labelled"][0]["image"], "img/lab0");
  const auto m = parse_manifest(path);
  EXPECT_EQ(m.labelled[0].image, (dir.path() / "img" / "lab0").lexically_normal());
  EXPECT_EQ(m.unlabelled_ids(), (std::vector<std::string>{"unl0", "unl1"}));
}

TEST(Manifest, Errors) {
  oracle::TempDir dir("manifest");
  save_volume(VoxelVolume::filled(Shape{2, 3, 3}, Spacing{1, 1, 1}, 1.0f), dir / "img");
  save_volume(BinaryMask::filled(Shape{2, 3, 3}, Spacing{1, 1, 1}, 1), dir / "msk");
  save_volume(BinaryMask::filled(Shape{2, 3, 4}, Spacing{1, 1, 1}, 1), dir / "wide");
  auto check = [&](const std::string& json, ErrorCode code) {
    std::ofstream(dir / "m.json", std::ios::trunc) << json;
    EXPECT_ERROR_CODE(parse_manifest(dir / "m.json"), code) ;
  };
  const std::string lab = R"({"id":"a","image":"img","mask":"msk"})";
  const std::string unl = R"({"id":"u","image":"img"})";
  check(R"({"labelled":[],"unlabelled":[)" + unl + "]}", ErrorCode::MalformedManifest);
  check(R"({"labelled":[)" + lab + R"(],"unlabelled":[]})", ErrorCode::MalformedManifest);
  check(R"({"labelled":[)" + lab + R"(],"unlabelled":[{"id":"a","image":"img"}]})", ErrorCode::DuplicateCaseId);
  check(R"({"labelled":[)" + lab + R"(],"unlabelled":[{"id":"u","image":"missing"}]})",
        ErrorCode::MissingReferencedFile);
  check(R"({"labelled":[{"id":"a","image":"img","mask":"wide"}],"unlabelled":[)" + unl + "]}",
        ErrorCode::ShapeMismatch);
  check(R"({"labelled":[{"id":"a/b","image":"img","mask":"msk"}],"unlabelled":[)" + unl + "]}",
        ErrorCode::MalformedManifest);
  check("[1,2]", ErrorCode::MalformedManifest);
  check("{", ErrorCode::MalformedManifest);
  EXPECT_ERROR_CODE(parse_manifest(dir / "nope.json"), ErrorCode::MissingFile);
}

TEST(Folds, PigeonholeAtNEqualsK) {
  const auto f = split_folds(case_names(5), 5, 1);
  EXPECT_EQ(f.fold_sizes(), (std::vector<std::size_t>(5, 1)));
}

TEST(Folds, BalancedSizes) {
  auto sizes = split_folds(case_names(7), 5, 1).fold_sizes();
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{1, 1, 1, 2, 2}));
}

TEST(Folds, MatchesOracleForFixedSeed) {
  const auto f = split_folds(case_names(10), 5, 42);
  EXPECT_EQ(f.fold_of, oracle::ref_folds(case_names(10), 5, 42));
  // Frozen from an independent transcription of the procedure.
  const std::map<std::string, std::size_t> frozen{{"c8", 0}, {"c3", 1}, {"c6", 2},  {"c5", 3}, {"c4", 4},
                                                  {"c1", 0}, {"c9", 1}, {"c2", 2}, {"c10", 3}, {"c7", 4}};
  EXPECT_EQ(f.fold_of, frozen);
}

TEST(Folds, RejectsSmallK) {
  EXPECT_ERROR_CODE(split_folds(case_names(4), 1, 0), ErrorCode::BadFoldCount);
  EXPECT_ERROR_CODE(split_folds(case_names(4), 0, 0), ErrorCode::BadFoldCount);
}

TEST(FoldsProperty, PartitionDeterministicOrderFree) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t k = 2 + rng() % 7;
    const std::uint64_t seed = rng();
    auto ids = case_names(n, "case_");
    const auto a = split_folds(ids, k, seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto b = split_folds(ids, k, seed);
    ASSERT_EQ(a, b);
    ASSERT_EQ(a.fold_of, oracle::ref_folds(ids, k, seed));
    std::set<std::string> seen;
    std::size_t total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      for (const auto& id : a.members(j)) ASSERT_TRUE(seen.insert(id).second);
      total += a.members(j).size();
    }
    ASSERT_EQ(total, n);
    const auto sizes = a.fold_sizes();
    ASSERT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
  }
}

TEST(Store, SnapshotsAreContiguousAndCoverageIsFrozen) {
  oracle::TempDir dir("store");
  PseudoLabelStore store(dir.path());
  EXPECT_EQ(store.iteration_count(), 0u);
  const auto one = BinaryMask::filled(Shape{1, 2, 2}, Spacing{1, 1, 1}, 1);
  const auto zero = BinaryMask::filled(Shape{1, 2, 2}, Spacing{1, 1, 1}, 0);
  std::map<std::string, BinaryMask> masks{{"a", one}, {"b", zero}};
  EXPECT_ERROR_CODE(store.write_iteration(1, masks), ErrorCode::StoreError);
  store.write_iteration(0, masks);
  EXPECT_EQ(store.iteration_count(), 1u);
  EXPECT_EQ(store.case_ids(0), (std::vector<std::string>{"a", "b"}));

  std::map<std::string, BinaryMask> fewer{{"a", one}};
  EXPECT_ERROR_CODE(store.write_iteration(1, fewer), ErrorCode::CoverageFailure);
  std::map<std::string, BinaryMask> reshaped{{"a", one}, {"b", BinaryMask::filled(Shape{1, 2, 3}, Spacing{1, 1, 1}, 0)}};
  EXPECT_ERROR_CODE(store.write_iteration(1, reshaped), ErrorCode::ShapeMismatch);
  EXPECT_FALSE(fs::exists(store.root() / "iter_1.partial") && store.iteration_count() != 1);

  std::map<std::string, BinaryMask> swapped{{"a", zero}, {"b", one}};
  store.write_iteration(1, swapped);
  EXPECT_EQ(store.iteration_count(), 2u);
  EXPECT_TRUE(bitwise_equal(store.load_mask(0, "a"), one));
  EXPECT_TRUE(bitwise_equal(store.load_mask(1, "a"), zero));
  store.truncate(1);
  EXPECT_EQ(store.iteration_count(), 1u);
  EXPECT_ERROR_CODE(store.load_mask(1, "a"), ErrorCode::StoreError);
}

TEST(Store, ProbabilityMapsLiveBesideSnapshotZero) {
  oracle::TempDir dir("store");
  PseudoLabelStore store(dir.path());
  std::map<std::string, BinaryMask> masks{{"a", BinaryMask::filled(Shape{1, 1, 2}, Spacing{1, 1, 1}, 1)}};
  std::map<std::string, ProbVolume> probs{{"a", ProbVolume(Shape{1, 1, 2}, Spacing{1, 1, 1}, {0.75f, 0.5f})}};
  store.write_iteration(0, masks, &probs);
  EXPECT_EQ(store.case_ids(0), (std::vector<std::string>{"a"}));
  EXPECT_TRUE(bitwise_equal(store.load_probs(0, "a").value(), probs.at("a")));
}

TEST(Store, GapInIndicesIsAnError) {
  oracle::TempDir dir("store");
  fs::create_directories(dir / "iter_0");
  fs::create_directories(dir / "iter_2");
  EXPECT_ERROR_CODE(PseudoLabelStore(dir.path()).iteration_count(), ErrorCode::StoreError);
}
