#pragma once

// Client side of the external segmenter protocol. Each call writes a request
// directory (request.json plus MVOL blobs), runs `<command...> <dir>`, and
// reads response.json and its blobs back from the same directory.

#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslprop/error.hpp"
#include "sslprop/mvol.hpp"
#include "sslprop/segmenter.hpp"

extern char** environ;

namespace sslprop {

struct ExternalCommand {
  std::vector<std::string> argv;  // program and leading arguments; the request dir is appended
  std::chrono::milliseconds timeout{std::chrono::minutes(10)};
  std::filesystem::path work_root;  // request directories are created here
  bool keep_requests = false;
};

class SubprocessClient {
 public:
  explicit SubprocessClient(ExternalCommand command) : command_(std::move(command)) {
    if (command_.argv.empty()) fail(ErrorCode::ConfigError, "external backend command is empty");
    if (command_.work_root.empty()) command_.work_root = std::filesystem::temp_directory_path() / "sslprop-requests";
  }

  const ExternalCommand& command() const noexcept { return command_; }

  std::filesystem::path new_request_dir() const {
    static std::atomic<std::uint64_t> counter{0};
    const auto dir = command_.work_root /
                     ("req_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
  }

  /// Writes request.json, runs the backend, returns the parsed response of
  /// status "ok".
  nlohmann::json invoke(const std::filesystem::path& dir, const nlohmann::json& request) const {
    {
      std::ofstream out(dir / "request.json", std::ios::trunc);
      if (!out) fail(ErrorCode::IoFailure, "cannot write " + (dir / "request.json").string());
      out << request.dump(2) << "\n";
    }
    run(dir);
    const auto response_path = dir / "response.json";
    if (!std::filesystem::is_regular_file(response_path)) {
      fail(ErrorCode::BackendFailure, describe() + " wrote no response.json");
    }
    nlohmann::json response;
    try {
      std::ifstream in(response_path);
      response = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::BackendFailure, describe() + " wrote malformed response.json: " + e.what());
    }
    if (!response.is_object() || !response.contains("status") || !response["status"].is_string()) {
      fail(ErrorCode::BackendFailure, describe() + " response lacks a status");
    }
    if (response["status"] != "ok") {
      const std::string message = response.value("message", std::string("no message"));
      fail(ErrorCode::BackendFailure, describe() + " reported error: " + message);
    }
    return response;
  }

  void finish(const std::filesystem::path& dir) const {
    if (!command_.keep_requests) {
      std::error_code ec;
      std::filesystem::remove_all(dir, ec);
    }
  }

  /// Resolves a blob stem named in a response against the request dir.
  static std::filesystem::path blob(const std::filesystem::path& dir, const nlohmann::json& response,
                                    const char* key) {
    if (!response.contains(key) || !response[key].is_string()) {
      fail(ErrorCode::BackendFailure, std::string("response lacks '") + key + "'");
    }
    std::filesystem::path p = response[key].get<std::string>();
    return p.is_absolute() ? p : dir / p;
  }

 private:
  std::string describe() const { return "backend '" + command_.argv.front() + "'"; }

  void run(const std::filesystem::path& dir) const {
    std::vector<std::string> args = command_.argv;
    args.push_back(dir.string());
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    cargs.push_back(nullptr);

    // Backend chatter goes to stderr; stdout belongs to the engine.
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, STDERR_FILENO, STDOUT_FILENO);
    pid_t pid = 0;
    const int rc = ::posix_spawnp(&pid, cargs[0], &actions, nullptr, cargs.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) fail(ErrorCode::BackendFailure, describe() + " could not be started: " + std::strerror(rc));

    const auto deadline = std::chrono::steady_clock::now() + command_.timeout;
    int status = 0;
    for (;;) {
      const pid_t done = ::waitpid(pid, &status, WNOHANG);
      if (done == pid) break;
      if (done < 0 && errno != EINTR) fail(ErrorCode::BackendFailure, describe() + ": waitpid failed");
      if (std::chrono::steady_clock::now() >= deadline) {
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        fail(ErrorCode::Timeout, describe() + " exceeded " + std::to_string(command_.timeout.count()) + " ms");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (WIFSIGNALED(status)) {
      fail(ErrorCode::BackendFailure, describe() + " killed by signal " + std::to_string(WTERMSIG(status)));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      fail(ErrorCode::BackendFailure, describe() + " exited with status " + std::to_string(code) +
                                          (code == 127 ? " (command not found?)" : ""));
    }
  }

  ExternalCommand command_;
};

class ExternalPropagation final : public FrozenSegmenter {
 public:
  explicit ExternalPropagation(ExternalCommand command) : client_(std::move(command)) {}

  LogitSequence propagate(const PropagationRequest& req) const override {
    req.validate();
    const auto dir = client_.new_request_dir();
    save_volume(req.frames, dir / "frames");
    save_volume(req.prompt_masks, dir / "prompt_masks");
    nlohmann::json request{{"kind", "propagate"},
                           {"frames", "frames"},
                           {"prompt_frames", req.prompt_frames},
                           {"prompt_masks", "prompt_masks"}};
    const auto response = client_.invoke(dir, request);
    LogitSequence logits = [&] {
      try {
        return load_volume<LogitKind>(SubprocessClient::blob(dir, response, "logits"));
      } catch (const Error& e) {
        fail(ErrorCode::BackendFailure, "unreadable logits: " + e.detail());
      }
    }();
    client_.finish(dir);
    if (logits.shape() != req.frames.shape()) {
      fail(ErrorCode::BackendFailure, "logits shape " + to_string(logits.shape()) + " != frames shape " +
                                          to_string(req.frames.shape()));
    }
    return logits;
  }

 private:
  SubprocessClient client_;
};

class ExternalModel final : public TrainedModel {
 public:
  ExternalModel(std::shared_ptr<const SubprocessClient> client, std::filesystem::path location)
      : client_(std::move(client)), location_(std::move(location)) {}

  ProbVolume predict(const VoxelVolume& v) const override {
    const auto dir = client_->new_request_dir();
    save_volume(v, dir / "frames");
    nlohmann::json request{{"kind", "predict"},
                           {"frames", "frames"},
                           {"prompt_frames", nlohmann::json::array()},
                           {"model", location_.string()}};
    const auto response = client_->invoke(dir, request);
    ProbVolume probs = [&] {
      try {
        return load_volume<ProbKind>(SubprocessClient::blob(dir, response, "probs"));
      } catch (const Error& e) {
        fail(ErrorCode::BackendFailure, "unreadable probabilities: " + e.detail());
      }
    }();
    client_->finish(dir);
    if (probs.shape() != v.shape()) {
      fail(ErrorCode::BackendFailure, "probability shape " + to_string(probs.shape()) + " != volume shape " +
                                          to_string(v.shape()));
    }
    return probs;
  }

  const std::filesystem::path& location() const noexcept override { return location_; }

 private:
  std::shared_ptr<const SubprocessClient> client_;
  std::filesystem::path location_;
};

class ExternalTrainer final : public TrainableSegmenter {
 public:
  explicit ExternalTrainer(ExternalCommand command)
      : client_(std::make_shared<const SubprocessClient>(std::move(command))) {}

  ModelHandle fit(const TrainingSet& ts, const std::filesystem::path& model_dir) const override {
    validate_training_set(ts);
    const auto dir = client_->new_request_dir();
    nlohmann::json pairs = nlohmann::json::array();
    for (std::size_t n = 0; n < ts.size(); ++n) {
      const std::string image = "pair_" + std::to_string(n) + "_image";
      const std::string mask = "pair_" + std::to_string(n) + "_mask";
      save_volume(*ts[n].image, dir / image);
      save_volume(*ts[n].mask, dir / mask);
      pairs.push_back({{"image", image}, {"mask", mask}});
    }
    const auto target = std::filesystem::absolute(model_dir);
    std::filesystem::create_directories(target);
    nlohmann::json request{{"kind", "fit"},
                           {"prompt_frames", nlohmann::json::array()},
                           {"training_pairs", pairs},
                           {"model", target.string()}};
    const auto response = client_->invoke(dir, request);
    std::filesystem::path location = target;
    if (response.contains("model")) {
      location = SubprocessClient::blob(dir, response, "model");
      if (location.lexically_normal().string().rfind(dir.lexically_normal().string(), 0) == 0) {
        fail(ErrorCode::BackendFailure, "model persisted inside the transient request directory");
      }
    }
    client_->finish(dir);
    return std::make_shared<ExternalModel>(client_, location);
  }

  ModelHandle load(const std::filesystem::path& model_dir) const override {
    if (!std::filesystem::is_directory(model_dir)) {
      fail(ErrorCode::UntrainedModel, "no model directory " + model_dir.string());
    }
    return std::make_shared<ExternalModel>(client_, std::filesystem::absolute(model_dir));
  }

 private:
  std::shared_ptr<const SubprocessClient> client_;
};

}  // namespace sslprop
