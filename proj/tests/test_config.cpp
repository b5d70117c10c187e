#include <atomic>
#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "sslprop/parallel.hpp"
#include "sslprop/run_config.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace sslprop;

TEST(RunConfig, ParsesEveryKnobAndResolvesRelativePaths) {
  const auto j = nlohmann::json::parse(R"({
    "manifest": "data/manifest.json",
    "output": "out",
    "seed": 9,
    "workers": 3,
    "propagation": {"backend": "external", "command": ["bin/seg", "--fast"], "timeout_s": 2.5},
    "trainer": {"backend": "reference-histogram", "bins": 32, "alpha": 0.5},
    "tffs": {"R": 6, "threshold": 0.4, "working_size": [64, 32]},
    "fsl": {"k": 3, "max_iterations": 2, "early_stop_dice": null, "threshold": 0.6,
            "resplit_per_iteration": true, "seed": 77}
  })");
  const auto c = RunConfig::from_json(j, "/base");
  EXPECT_EQ(c.manifest, fs::path("/base/data/manifest.json"));
  EXPECT_EQ(c.output, fs::path("/base/out"));
  EXPECT_EQ(c.workers, 3u);
  EXPECT_EQ(c.propagation.kind, "external");
  EXPECT_EQ(c.propagation.command, (std::vector<std::string>{"/base/bin/seg", "--fast"}));
  EXPECT_EQ(c.propagation.timeout_s, 2.5);
  EXPECT_EQ(c.trainer.histogram.bins, 32u);
  EXPECT_EQ(c.trainer.histogram.alpha, 0.5);
  EXPECT_EQ(c.tffs.insertions, 6u);
  EXPECT_EQ(c.tffs.seed, 9u);
  EXPECT_FLOAT_EQ(c.tffs.threshold, 0.4f);
  EXPECT_EQ(c.tffs.working_size.value(), (InPlaneSize{64, 32}));
  EXPECT_EQ(c.fsl.folds, 3u);
  EXPECT_FALSE(c.fsl.early_stop_dice.has_value());
  EXPECT_TRUE(c.fsl.resplit_per_iteration);
  EXPECT_EQ(c.fsl.seed, 77u);
  c.validate();
  EXPECT_EQ(c.external_command(c.propagation).timeout.count(), 2500);
}

TEST(RunConfig, DefaultsAndErrors) {
  const auto c = RunConfig::from_json(nlohmann::json::parse(R"({"manifest": "m.json", "output": "o"})"), "/b");
  EXPECT_EQ(c.propagation.kind, "reference-propagation");
  EXPECT_EQ(c.trainer.kind, "reference-histogram");
  EXPECT_EQ(c.fsl.folds, 5u);
  EXPECT_EQ(c.fsl.early_stop_dice.value(), 0.995);
  EXPECT_EQ(c.tffs.insertions, 4u);
  EXPECT_NE(c.make_propagation(), nullptr);
  EXPECT_NE(c.make_trainer(), nullptr);

  EXPECT_ERROR_CODE(RunConfig::from_json(nlohmann::json::parse(R"({"workers": "many"})"), "/"), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(RunConfig::from_json(nlohmann::json::parse(R"({"tffs": {"working_size": "huge"}})"), "/"),
                    ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(RunConfig::from_json(nlohmann::json::parse("[]"), "/"), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(RunConfig::from_json(nlohmann::json::object(), "/").validate(), ErrorCode::ConfigError);
  auto unknown = c;
  unknown.propagation.kind = "magic";
  EXPECT_ERROR_CODE(unknown.make_propagation(), ErrorCode::ConfigError);
  EXPECT_ERROR_CODE(RunConfig::load("/definitely/not/here.json"), ErrorCode::ConfigError);
}

TEST(RunConfig, CommandStringIsSplitOnWhitespace) {
  const auto c = RunConfig::from_json(
      nlohmann::json::parse(R"({"propagation": {"backend": "external", "command": "python3  -m bridge"}})"), "/b");
  EXPECT_EQ(c.propagation.command, (std::vector<std::string>{"python3", "-m", "bridge"}));
}

TEST(RunConfig, WorkerPrecedence) {
  ::unsetenv("SSLPROP_WORKERS");
  EXPECT_EQ(resolve_workers(std::nullopt, 2), 2u);
  ::setenv("SSLPROP_WORKERS", "5", 1);
  EXPECT_EQ(resolve_workers(std::nullopt, 2), 5u);
  EXPECT_EQ(resolve_workers(7, 2), 7u);
  ::setenv("SSLPROP_WORKERS", "zero", 1);
  EXPECT_ERROR_CODE(resolve_workers(std::nullopt, 2), ErrorCode::ConfigError);
  ::unsetenv("SSLPROP_WORKERS");
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (std::size_t workers : {1u, 2u, 8u}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RethrowsLowestFailingIndex) {
  for (std::size_t workers : {1u, 4u}) {
    try {
      parallel_for(50, workers, [](std::size_t i) {
        if (i == 7 || i == 31) fail(ErrorCode::BackendFailure, "index " + std::to_string(i));
      });
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.detail(), "index 7");
    }
  }
}
