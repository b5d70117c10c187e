// sslprop command-line driver.
//
// Exit codes: 0 success, 1 usage, 2 gen-synthetic, 3 init-pseudo,
// 4 refine, 5 eval, 6 infer. Standard output carries only the path of the
// machine-readable summary; progress goes to standard error and to
// <out>/logs/run.log.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sslprop/sslprop.hpp"

namespace {

namespace fs = std::filesystem;
using namespace sslprop;

enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kGenSynthetic = 2,
  kInitPseudo = 3,
  kRefine = 4,
  kEval = 5,
  kInfer = 6,
};

class RunLog {
 public:
  RunLog(const fs::path& out_dir, const std::string& command) {
    std::error_code ec;
    fs::create_directories(out_dir / "logs", ec);
    file_.open(out_dir / "logs" / "run.log", std::ios::app);
    line(command + " started");
  }

  void line(const std::string& message) {
    std::cerr << message << "\n";
    if (file_) file_ << timestamp() << " " << message << "\n" << std::flush;
  }

 private:
  static std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
  }

  std::ofstream file_;
};

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
}

int report_failure(int code, const std::string& command, const std::exception& e) {
  std::cerr << "sslprop " << command << ": " << e.what() << "\n";
  return code;
}

/// Case ids of every MVOL volume directly inside `dir`.
std::vector<std::string> volume_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json" && mvol_exists(entry.path())) {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct ConfigFlags {
  std::string config;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string output;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "run configuration (JSON)")->required();
    cmd.add_option("--workers", workers, "worker threads (overrides SSLPROP_WORKERS and config)");
    cmd.add_option("--seed", seed, "base seed for insertion plans and fold splits");
    cmd.add_option("--manifest", manifest, "dataset manifest (overrides config)");
    cmd.add_option("--output", output, "output root (overrides config)");
  }

  RunConfig load() const {
    RunConfig c = RunConfig::load(config);
    if (!manifest.empty()) c.manifest = fs::absolute(manifest).lexically_normal();
    if (!output.empty()) c.output = fs::absolute(output).lexically_normal();
    if (seed) c.seed = c.tffs.seed = c.fsl.seed = *seed;
    c.workers = resolve_workers(workers, c.workers);
    c.validate();
    return c;
  }
};

int cmd_gen_synthetic(const std::string& spec_path, const std::string& out) {
  try {
    if (!fs::is_regular_file(spec_path)) fail(ErrorCode::BadSpec, "spec file not found: " + spec_path);
    nlohmann::json j;
    try {
      std::ifstream in(spec_path);
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::BadSpec, spec_path + ": " + e.what());
    }
    const auto spec = SynthSpec::from_json(j);
    const fs::path root = fs::absolute(out).lexically_normal();
    RunLog log(root, "gen-synthetic");
    const auto ds = generate(spec, root);
    nlohmann::ordered_json summary;
    summary["manifest"] = ds.manifest_path.string();
    summary["labelled"] = ds.manifest.labelled.size();
    summary["unlabelled"] = ds.manifest.unlabelled.size();
    summary["test"] = spec.test;
    summary["truth_dir"] = ds.truth_dir.string();
    summary["test_dir"] = ds.test_dir.string();
    summary["tags"] = ds.tags_path.string();
    const auto path = root / "synthetic_summary.json";
    write_json(path, summary);
    log.line("generated " + std::to_string(ds.manifest.labelled.size()) + " labelled, " +
             std::to_string(ds.manifest.unlabelled.size()) + " unlabelled, " + std::to_string(spec.test) +
             " test cases in " + root.string());
    std::cout << path.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(kGenSynthetic, "gen-synthetic", e);
  }
}

int cmd_init_pseudo(const ConfigFlags& flags, std::optional<std::size_t> insertions) {
  try {
    RunConfig cfg = flags.load();
    if (insertions) cfg.tffs.insertions = *insertions;
    cfg.validate();
    const auto manifest = parse_manifest(cfg.manifest);
    RunLog log(cfg.output, "init-pseudo");
    PseudoLabelStore store(cfg.output);
    store.truncate(0);
    fs::remove_all(cfg.output / "models");
    fs::remove(cfg.output / "trace.json");
    const auto backend = cfg.make_propagation();
    log.line("init-pseudo: " + std::to_string(manifest.unlabelled.size()) + " unlabelled cases, " +
             std::to_string(manifest.labelled.size()) + " labelled, R=" + std::to_string(cfg.tffs.insertions) +
             ", workers=" + std::to_string(cfg.workers));
    const auto cases = pseudo_label_dataset(manifest, *backend, cfg.tffs, store, cfg.workers,
                                            [&](const std::string& id, std::size_t done, std::size_t total) {
                                              log.line("[" + std::to_string(done) + "/" + std::to_string(total) +
                                                       "] " + id);
                                            });
    nlohmann::ordered_json summary;
    summary["snapshot"] = store.iteration_dir(0).string();
    summary["R"] = cfg.tffs.insertions;
    summary["threshold"] = cfg.tffs.threshold;
    summary["seed"] = cfg.tffs.seed;
    summary["cases"] = nlohmann::ordered_json::array();
    for (const auto& c : cases) summary["cases"].push_back({{"id", c.id}, {"foreground_voxels", c.foreground_voxels}});
    const auto path = cfg.output / "init_summary.json";
    write_json(path, summary);
    log.line("init-pseudo: snapshot 0 committed to " + store.iteration_dir(0).string());
    std::cout << path.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(kInitPseudo, "init-pseudo", e);
  }
}

int cmd_refine(const ConfigFlags& flags, std::optional<std::size_t> folds, std::optional<std::size_t> max_iterations) {
  try {
    RunConfig cfg = flags.load();
    if (folds) cfg.fsl.folds = *folds;
    if (max_iterations) cfg.fsl.max_iterations = *max_iterations;
    cfg.validate();
    const auto manifest = parse_manifest(cfg.manifest);
    PseudoLabelStore store(cfg.output);
    if (store.iteration_count() < 1) {
      fail(ErrorCode::StoreError, "no pseudo-label snapshot 0 under " + cfg.output.string() +
                                      "; run 'sslprop init-pseudo --config " + flags.config + "' first");
    }
    RunLog log(cfg.output, "refine");
    const auto trainer = cfg.make_trainer();
    log.line("refine: k=" + std::to_string(cfg.fsl.folds) + ", max_iterations=" + std::to_string(cfg.fsl.max_iterations) +
             ", workers=" + std::to_string(cfg.workers));
    const auto trace = run_refinement(manifest, store, *trainer, cfg.fsl, cfg.workers, [&](const IterationRecord& r) {
      std::ostringstream os;
      os << "refine: iteration " << r.iteration << " mean inter-iteration dice " << std::setprecision(6)
         << r.inter_iteration_dice;
      log.line(os.str());
    });
    const auto path = cfg.output / "trace.json";
    write_json(path, trace.to_json(cfg.output, cfg.fsl));
    log.line("refine: stopped (" + trace.stop_reason + ") after " + std::to_string(trace.iterations.size()) +
             " iteration(s)");
    std::cout << path.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(kRefine, "refine", e);
  }
}

nlohmann::json read_json_file(const fs::path& path, ErrorCode code) {
  if (!fs::is_regular_file(path)) fail(code, "file not found: " + path.string());
  try {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(code, path.string() + ": " + e.what());
  }
}

int cmd_infer(const ConfigFlags& flags, const std::string& models_flag, const std::string& out,
              const std::vector<std::string>& inputs) {
  try {
    const RunConfig cfg = flags.load();
    fs::path models = models_flag;
    if (models.empty()) {
      const auto trace = read_json_file(cfg.output / "trace.json", ErrorCode::UntrainedModel);
      const auto final_models = trace.value("final_models", std::string());
      if (final_models.empty()) fail(ErrorCode::UntrainedModel, "trace.json names no final models; pass --models");
      models = cfg.output / final_models;
    }
    const auto trainer = cfg.make_trainer();
    std::vector<ModelHandle> handles;
    for (std::size_t j = 0; j < cfg.fsl.folds; ++j) {
      const auto dir = models / ("fold_" + std::to_string(j));
      if (!fs::is_directory(dir)) {
        fail(ErrorCode::UntrainedModel, "fold model " + dir.string() + " is missing; expected " +
                                            std::to_string(cfg.fsl.folds) + " folds");
      }
      handles.push_back(trainer->load(dir));
    }
    const fs::path out_dir = fs::absolute(out).lexically_normal();
    RunLog log(out_dir, "infer");
    nlohmann::ordered_json summary;
    summary["models"] = fs::absolute(models).lexically_normal().string();
    summary["k"] = cfg.fsl.folds;
    summary["threshold"] = cfg.fsl.threshold;
    summary["outputs"] = nlohmann::ordered_json::array();
    for (const auto& input : inputs) {
      const auto stem = mvol_stem(input);
      const auto image = load_volume<IntensityKind>(stem);
      const auto mask = infer(handles, image, cfg.fsl.threshold);
      const auto target = out_dir / stem.filename();
      save_volume(mask, target);
      summary["outputs"].push_back(
          {{"input", stem.string()}, {"mask", target.string()}, {"foreground_voxels", count_foreground(mask)}});
      log.line("infer: " + stem.filename().string() + " -> " + target.string());
    }
    const auto path = out_dir / "infer_summary.json";
    write_json(path, summary);
    std::cout << path.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(kInfer, "infer", e);
  }
}

std::map<std::string, std::vector<std::string>> read_tags(const fs::path& path) {
  const auto j = read_json_file(path, ErrorCode::ConfigError);
  if (!j.is_object()) fail(ErrorCode::ConfigError, path.string() + ": tags must map case ids to tag lists");
  std::map<std::string, std::vector<std::string>> tags;
  for (const auto& [id, value] : j.items()) {
    if (value.is_string()) {
      tags[id] = {value.get<std::string>()};
    } else if (value.is_array()) {
      for (const auto& t : value) {
        if (!t.is_string()) fail(ErrorCode::ConfigError, path.string() + ": tag of '" + id + "' is not a string");
        tags[id].push_back(t.get<std::string>());
      }
    } else {
      fail(ErrorCode::ConfigError, path.string() + ": tags of '" + id + "' must be a string or a list");
    }
  }
  return tags;
}

int cmd_eval(const std::string& pred, const std::string& truth, const std::string& tags_path, const std::string& out) {
  try {
    if (!fs::is_directory(pred)) fail(ErrorCode::MissingFile, "prediction directory not found: " + pred);
    if (!fs::is_directory(truth)) fail(ErrorCode::MissingFile, "truth directory not found: " + truth);
    const auto tags = tags_path.empty() ? std::map<std::string, std::vector<std::string>>{} : read_tags(tags_path);
    const auto ids = volume_ids(pred);
    if (ids.empty()) fail(ErrorCode::MissingFile, "no predictions in " + pred);
    std::vector<std::string> missing;
    for (const auto& id : ids) {
      if (!mvol_exists(fs::path(truth) / id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::string names;
      for (const auto& id : missing) names += (names.empty() ? "" : ", ") + id;
      fail(ErrorCode::MissingFile, "no ground truth for case(s): " + names);
    }
    const fs::path out_dir = fs::absolute(out).lexically_normal();
    RunLog log(out_dir, "eval");
    std::vector<CaseEvaluation> cases;
    for (const auto& id : ids) {
      const auto p = load_volume<MaskKind>(fs::path(pred) / id);
      const auto t = load_volume<MaskKind>(fs::path(truth) / id);
      CaseEvaluation c;
      c.id = id;
      if (auto it = tags.find(id); it != tags.end()) c.tags = it->second;
      try {
        c.dice = dice(p, t);
        c.hd_mm = hausdorff(p, t);
      } catch (const Error& e) {
        fail(e.code(), "case '" + id + "': " + e.detail());
      }
      cases.push_back(std::move(c));
    }
    const auto report = aggregate_report(std::move(cases));
    const auto path = out_dir / "report.json";
    write_json(path, report.to_json());
    write_text(out_dir / "report.txt", report.to_table());
    std::cerr << report.to_table();
    log.line("eval: " + std::to_string(report.cases.size()) + " case(s) scored");
    std::cout << path.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    return report_failure(kEval, "eval", e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised volumetric segmentation: pseudo-label initialization, k-fold refinement, inference "
               "and evaluation."};
  app.require_subcommand(1);

  std::string spec_path, synth_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset described by a spec file");
  gen->add_option("spec", spec_path, "synthetic spec (JSON)")->required();
  gen->add_option("--out", synth_out, "dataset root")->required();

  ConfigFlags init_flags;
  std::optional<std::size_t> insertions;
  auto* init = app.add_subcommand("init-pseudo", "compute pseudo-label snapshot 0 with the frozen segmenter");
  init_flags.attach(*init);
  init->add_option("--insertions", insertions, "insertions per labelled volume (R)");

  ConfigFlags refine_flags;
  std::optional<std::size_t> folds, max_iterations;
  auto* refine = app.add_subcommand("refine", "iteratively refine pseudo labels with k-fold trained models");
  refine_flags.attach(*refine);
  refine->add_option("--folds", folds, "number of folds (k)");
  refine->add_option("--max-iterations", max_iterations, "refinement iteration cap");

  ConfigFlags infer_flags;
  std::string models_dir, infer_out;
  std::vector<std::string> inputs;
  auto* inf = app.add_subcommand("infer", "segment volumes with the mean of the k fold models");
  infer_flags.attach(*inf);
  inf->add_option("--models", models_dir, "directory holding fold_0..fold_{k-1} (default: final models of trace)");
  inf->add_option("--out", infer_out, "mask output directory")->required();
  inf->add_option("inputs", inputs, "input volumes (MVOL paths)")->required();

  std::string pred_dir, truth_dir, tags_file, eval_out;
  auto* ev = app.add_subcommand("eval", "score predicted masks against ground truth");
  ev->add_option("predictions", pred_dir, "directory of predicted masks")->required();
  ev->add_option("truth", truth_dir, "directory of ground-truth masks")->required();
  ev->add_option("--tags", tags_file, "JSON map of case id to tag list");
  ev->add_option("--out", eval_out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*gen) return cmd_gen_synthetic(spec_path, synth_out);
  if (*init) return cmd_init_pseudo(init_flags, insertions);
  if (*refine) return cmd_refine(refine_flags, folds, max_iterations);
  if (*inf) return cmd_infer(infer_flags, models_dir, infer_out, inputs);
  if (*ev) return cmd_eval(pred_dir, truth_dir, tags_file, eval_out);
  return kUsage;
}
