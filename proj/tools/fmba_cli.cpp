// Experiment driver over the C interface of libfmba.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "fmba/fmba.h"

namespace fs = std::filesystem;

namespace {

/// Carries a library status out of a subcommand.
struct Failure : std::runtime_error {
  fmba_status status;
  Failure(fmba_status s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void check(fmba_status s) {
  if (s != FMBA_OK) throw Failure(s, fmba_last_error());
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<fmba_config, Deleter<fmba_config, fmba_config_free>>;
using ScenePtr = std::unique_ptr<fmba_scene, Deleter<fmba_scene, fmba_scene_free>>;
using ParamsPtr = std::unique_ptr<fmba_params, Deleter<fmba_params, fmba_params_free>>;
using ResultPtr = std::unique_ptr<fmba_result, Deleter<fmba_result, fmba_result_free>>;
using TextPtr = std::unique_ptr<char, Deleter<char, fmba_string_free>>;

std::string take(char* text) { return TextPtr(text).get(); }

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for scene generation, initialisation and training")->capture_default_str();
  cmd->add_option("--out-dir", c.out_dir, "Directory receiving every output file")->capture_default_str();
}

ConfigPtr load(const Common& c) {
  fmba_config* raw = nullptr;
  check(c.config_path.empty() ? fmba_config_default(&raw) : fmba_config_load(c.config_path.c_str(), &raw));
  ConfigPtr config(raw);
  check(fmba_config_set_seed(config.get(), c.seed));
  return config;
}

fs::path prepare(const Common& c, const fmba_config* config) {
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  char* json = nullptr;
  check(fmba_config_to_json(config, &json));
  std::ofstream(dir / "config.json") << take(json);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Failure(FMBA_ERR_IO, "cannot write " + path.string());
  f << text;
}

ParamsPtr params_for(const fmba_config* config, const std::string& checkpoint, std::uint64_t seed) {
  fmba_params* raw = nullptr;
  check(checkpoint.empty() ? fmba_params_init(config, seed, &raw) : fmba_params_load(checkpoint.c_str(), &raw));
  return ParamsPtr(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-metric bundle adjustment experiments"};
  app.require_subcommand(1);

  Common gen_c;
  int gen_count = 1;
  auto* gen = app.add_subcommand("generate", "Write synthetic scenes to <out-dir>/scene_<seed>");
  add_common(gen, gen_c);
  gen->add_option("--count", gen_count, "Number of consecutive seeds")->check(CLI::PositiveNumber)->capture_default_str();

  Common solve_c;
  std::string solve_scene, solve_ckpt, solve_mode;
  std::optional<double> solve_lambda;
  auto* slv = app.add_subcommand("solve", "Solve one scene; print metrics JSON and the trace CSV");
  add_common(slv, solve_c);
  slv->add_option("--scene", solve_scene, "Scene directory; generated from the config and seed when absent")
      ->check(CLI::ExistingDirectory);
  slv->add_option("--checkpoint", solve_ckpt, "Trained parameters")->check(CLI::ExistingFile);
  slv->add_option("--mode", solve_mode, "predicted_lambda, constant_lambda, gauss_newton, classic_lm or pose_only");
  slv->add_option("--lambda", solve_lambda, "Damping for constant_lambda (0.5 when omitted)");

  Common train_c;
  std::string train_ckpt;
  auto* trn = app.add_subcommand("train", "Train on the scenes of the train section");
  add_common(trn, train_c);
  trn->add_option("--checkpoint", train_ckpt, "Initial parameters")->check(CLI::ExistingFile);

  Common abl_c;
  std::string abl_suite, abl_ckpt;
  auto* abl = app.add_subcommand("ablate", "Run an ablation suite and write <out-dir>/<suite>.csv");
  add_common(abl, abl_c);
  abl->add_option("--suite", abl_suite, "gn_vs_lm, constant_lambda_sweep, pose_only_vs_joint, "
                                        "raw_vs_trained_features or multiview_2_3_5")
      ->required();
  abl->add_option("--checkpoint", abl_ckpt, "Trained parameters")->check(CLI::ExistingFile);

  Common eval_c;
  std::string pred_poses, gt_poses, pred_depth, gt_depth;
  auto* evl = app.add_subcommand("eval", "Metrics of predicted poses and depth against ground truth files");
  add_common(evl, eval_c);
  evl->add_option("--pred-poses", pred_poses, "Predicted poses")->required()->check(CLI::ExistingFile);
  evl->add_option("--gt-poses", gt_poses, "Ground-truth poses")->required()->check(CLI::ExistingFile);
  auto* pd = evl->add_option("--pred-depth", pred_depth, "Predicted depth (.fgrid)")->check(CLI::ExistingFile);
  auto* gd = evl->add_option("--gt-depth", gt_depth, "Ground-truth depth (.fgrid)")->check(CLI::ExistingFile);
  pd->needs(gd);
  gd->needs(pd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto config = load(gen_c);
      const fs::path dir = prepare(gen_c, config.get());
      for (int i = 0; i < gen_count; ++i) {
        const std::uint64_t seed = gen_c.seed + static_cast<std::uint64_t>(i);
        fmba_scene* raw = nullptr;
        check(fmba_scene_generate(config.get(), seed, &raw));
        ScenePtr scene(raw);
        const fs::path target = dir / ("scene_" + std::to_string(seed));
        check(fmba_scene_save(scene.get(), target.string().c_str()));
        std::cout << target.string() << "\n";
      }
    } else if (*slv) {
      auto config = load(solve_c);
      if (!solve_mode.empty() || solve_lambda) {
        check(fmba_config_set_mode(config.get(), solve_mode.empty() ? "constant_lambda" : solve_mode.c_str(),
                                   solve_lambda.value_or(0.5)));
      }
      const fs::path dir = prepare(solve_c, config.get());
      fmba_scene* raw_scene = nullptr;
      check(solve_scene.empty() ? fmba_scene_generate(config.get(), solve_c.seed, &raw_scene)
                                : fmba_scene_load(solve_scene.c_str(), &raw_scene));
      ScenePtr scene(raw_scene);
      auto params = params_for(config.get(), solve_ckpt, solve_c.seed);
      fmba_result* raw_result = nullptr;
      check(fmba_solve(params.get(), scene.get(), config.get(), &raw_result));
      ResultPtr result(raw_result);
      char* text = nullptr;
      check(fmba_result_metrics_json(result.get(), &text));
      const std::string metrics = take(text);
      check(fmba_result_trace_csv(result.get(), &text));
      const std::string trace = take(text);
      write_text(dir / "metrics.json", metrics + "\n");
      write_text(dir / "trace.csv", trace);
      check(fmba_result_save(result.get(), dir.string().c_str()));
      std::cout << metrics << "\n" << trace;
    } else if (*trn) {
      auto config = load(train_c);
      const fs::path dir = prepare(train_c, config.get());
      auto init = params_for(config.get(), train_ckpt, train_c.seed);
      fmba_params* raw = nullptr;
      char* loss = nullptr;
      int skipped = 0;
      check(fmba_train(config.get(), init.get(), &raw, &loss, &skipped));
      ParamsPtr trained(raw);
      write_text(dir / "loss.csv", take(loss));
      check(fmba_params_save(trained.get(), (dir / "checkpoint.bin").string().c_str()));
      std::cout << "wrote " << (dir / "checkpoint.bin").string() << " (" << skipped
                << " solves skipped as singular)\n";
    } else if (*abl) {
      auto config = load(abl_c);
      const fs::path dir = prepare(abl_c, config.get());
      auto params = params_for(config.get(), abl_ckpt, abl_c.seed);
      char* csv = nullptr;
      check(fmba_ablate(config.get(), abl_suite.c_str(), params.get(), &csv));
      const std::string table = take(csv);
      write_text(dir / (abl_suite + ".csv"), table);
      std::cout << table;
    } else if (*evl) {
      auto config = load(eval_c);
      const fs::path dir = prepare(eval_c, config.get());
      char* json = nullptr;
      check(fmba_eval_files(pred_poses.c_str(), gt_poses.c_str(), pred_depth.empty() ? nullptr : pred_depth.c_str(),
                            gt_depth.empty() ? nullptr : gt_depth.c_str(), &json));
      const std::string metrics = take(json);
      write_text(dir / "metrics.json", metrics + "\n");
      std::cout << metrics << "\n";
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << fmba_status_name(f.status) << ": " << f.what() << "\n";
    return static_cast<int>(f.status);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(FMBA_ERR_INTERNAL);
  }
  return 0;
}
