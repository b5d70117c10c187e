#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/external_backend.hpp"
#include "sslprop/fsl.hpp"
#include "sslprop/reference_backends.hpp"
#include "sslprop/tffs.hpp"

namespace sslprop {

/// Backend selection for one role. "reference-propagation" and
/// "reference-histogram" are the built-ins; "external" runs a command that
/// speaks the subprocess protocol.
struct BackendConfig {
  explicit BackendConfig(std::string k) : kind(std::move(k)) {}

  std::string kind;
  std::vector<std::string> command;
  double timeout_s = 600.0;
  bool keep_requests = false;
  NearestPromptPropagation::Options propagation;
  HistogramClassifier::Options histogram;
};

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path output;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  BackendConfig propagation{"reference-propagation"};
  BackendConfig trainer{"reference-histogram"};
  TffsConfig tffs;
  FslConfig fsl;

  /// Relative paths are resolved against `base` (the config file's directory).
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    RunConfig c;
    auto bad = [](const std::string& why) { fail(ErrorCode::ConfigError, why); };
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path = p;
      return (path.is_relative() ? base / path : path).lexically_normal();
    };
    try {
      if (!j.is_object()) bad("config must be a JSON object");
      if (j.contains("manifest")) c.manifest = resolve(j.at("manifest").get<std::string>());
      if (j.contains("output")) c.output = resolve(j.at("output").get<std::string>());
      c.seed = j.value("seed", c.seed);
      c.workers = j.value("workers", c.workers);
      c.tffs.seed = c.seed;
      c.fsl.seed = c.seed;

      auto backend = [&](const char* key, BackendConfig& b) {
        if (!j.contains(key)) return;
        const auto& e = j.at(key);
        b.kind = e.value("backend", b.kind);
        if (e.contains("command")) {
          if (e.at("command").is_string()) {
            b.command = split_command(e.at("command").get<std::string>());
          } else {
            b.command = e.at("command").get<std::vector<std::string>>();
          }
          for (auto& arg : b.command) {
            // Relative program paths that exist next to the config are resolved.
            if (&arg == &b.command.front() && arg.find('/') != std::string::npos &&
                std::filesystem::path(arg).is_relative()) {
              arg = resolve(arg).string();
            }
          }
        }
        b.timeout_s = e.value("timeout_s", b.timeout_s);
        b.keep_requests = e.value("keep_requests", b.keep_requests);
        b.propagation.decay = e.value("decay", b.propagation.decay);
        b.propagation.epsilon = e.value("epsilon", b.propagation.epsilon);
        b.histogram.bins = e.value("bins", b.histogram.bins);
        b.histogram.alpha = e.value("alpha", b.histogram.alpha);
      };
      backend("propagation", c.propagation);
      backend("trainer", c.trainer);

      if (j.contains("tffs")) {
        const auto& t = j.at("tffs");
        c.tffs.insertions = t.value("R", c.tffs.insertions);
        c.tffs.threshold = t.value("threshold", c.tffs.threshold);
        c.tffs.seed = t.value("seed", c.tffs.seed);
        if (t.contains("working_size")) {
          const auto& w = t.at("working_size");
          if (w.is_string()) {
            if (w != "native") bad("tffs.working_size must be \"native\" or [H, W]");
            c.tffs.working_size.reset();
          } else {
            const auto hw = w.get<std::array<std::size_t, 2>>();
            c.tffs.working_size = InPlaneSize{hw[0], hw[1]};
          }
        }
      }
      if (j.contains("fsl")) {
        const auto& f = j.at("fsl");
        c.fsl.folds = f.value("k", c.fsl.folds);
        c.fsl.max_iterations = f.value("max_iterations", c.fsl.max_iterations);
        if (f.contains("early_stop_dice")) {
          const auto& e = f.at("early_stop_dice");
          if (e.is_null() || (e.is_boolean() && !e.get<bool>())) {
            c.fsl.early_stop_dice.reset();
          } else {
            c.fsl.early_stop_dice = e.get<double>();
          }
        }
        c.fsl.threshold = f.value("threshold", c.fsl.threshold);
        c.fsl.resplit_per_iteration = f.value("resplit_per_iteration", c.fsl.resplit_per_iteration);
        c.fsl.seed = f.value("seed", c.fsl.seed);
      }
    } catch (const nlohmann::json::exception& e) {
      bad(e.what());
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::ConfigError, "config not found: " + path.string());
    nlohmann::json j;
    try {
      std::ifstream in(path);
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    return from_json(j, std::filesystem::absolute(path).parent_path());
  }

  static std::vector<std::string> split_command(const std::string& line) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : line) {
      if (ch == ' ' || ch == '\t') {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(ch);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
  }

  void validate() const {
    if (manifest.empty()) fail(ErrorCode::ConfigError, "no manifest configured");
    if (output.empty()) fail(ErrorCode::ConfigError, "no output root configured");
    if (workers < 1) fail(ErrorCode::ConfigError, "workers must be >= 1");
    tffs.validate();
    fsl.validate();
  }

  ExternalCommand external_command(const BackendConfig& b) const {
    ExternalCommand cmd;
    cmd.argv = b.command;
    cmd.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(b.timeout_s * 1000.0));
    cmd.work_root = std::filesystem::absolute(output) / "requests";
    cmd.keep_requests = b.keep_requests;
    return cmd;
  }

  std::unique_ptr<FrozenSegmenter> make_propagation() const {
    if (propagation.kind == "reference-propagation") {
      return std::make_unique<NearestPromptPropagation>(propagation.propagation);
    }
    if (propagation.kind == "external") return std::make_unique<ExternalPropagation>(external_command(propagation));
    fail(ErrorCode::ConfigError, "unknown propagation backend '" + propagation.kind + "'");
  }

  std::unique_ptr<TrainableSegmenter> make_trainer() const {
    if (trainer.kind == "reference-histogram") return std::make_unique<HistogramClassifier>(trainer.histogram);
    if (trainer.kind == "external") return std::make_unique<ExternalTrainer>(external_command(trainer));
    fail(ErrorCode::ConfigError, "unknown trainer backend '" + trainer.kind + "'");
  }
};

/// Worker count precedence: explicit flag, then SSLPROP_WORKERS, then config.
inline std::size_t resolve_workers(std::optional<std::size_t> flag, std::size_t configured) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SSLPROP_WORKERS"); env && *env) {
    char* end = nullptr;
    const unsigned long long n = std::strtoull(env, &end, 10);
    if (*end != '\0' || n < 1) fail(ErrorCode::ConfigError, std::string("SSLPROP_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(n);
  }
  return configured;
}

}  // namespace sslprop
