#include "fmba/fmba.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <string>
#include <vector>

#include "fmba/config.hpp"
#include "fmba/harness.hpp"
#include "fmba/learning.hpp"
#include "fmba/metrics.hpp"
#include "fmba/scene.hpp"

struct fmba_config {
  fmba::RunConfig value;
};
struct fmba_scene {
  fmba::SyntheticScene value;
};
struct fmba_params {
  fmba::TrainableParams value;
};
struct fmba_result {
  fmba::ForwardPass pass;
  fmba::MetricsReport metrics;
};

namespace {

thread_local std::string g_last_error;

fmba_status to_status(fmba::ErrorCode code) { return static_cast<fmba_status>(static_cast<int>(code)); }

/// Runs `body`, translating exceptions into status codes and the per-thread
/// error message.
template <typename F>
fmba_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FMBA_OK;
  } catch (const fmba::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FMBA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FMBA_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw fmba::Error(fmba::ErrorCode::kInvalidArgument, what);
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* fmba_version(void) { return "1.0.0"; }

const char* fmba_status_name(fmba_status status) {
  if (status == FMBA_OK) return "Ok";
  if (status == FMBA_ERR_INTERNAL) return "Internal";
  if (status >= FMBA_ERR_INVALID_ARGUMENT && status <= FMBA_ERR_IO) {
    return fmba::error_code_name(static_cast<fmba::ErrorCode>(static_cast<int>(status)));
  }
  return "Unknown";
}

const char* fmba_last_error(void) { return g_last_error.c_str(); }

void fmba_string_free(char* text) { delete[] text; }

fmba_status fmba_config_default(fmba_config** out) {
  return guarded([&] {
    require(out != nullptr, "output pointer is null");
    *out = new fmba_config{};
  });
}

fmba_status fmba_config_parse(const char* json_text, fmba_config** out) {
  return guarded([&] {
    require(json_text != nullptr && out != nullptr, "null argument");
    *out = new fmba_config{fmba::parse_config(json_text)};
  });
}

fmba_status fmba_config_load(const char* path, fmba_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new fmba_config{fmba::load_config(path)};
  });
}

fmba_status fmba_config_to_json(const fmba_config* config, char** out) {
  return guarded([&] {
    require(config != nullptr && out != nullptr, "null argument");
    *out = copy_string(fmba::config_to_json(config->value));
  });
}

fmba_status fmba_config_set_seed(fmba_config* config, uint64_t seed) {
  return guarded([&] {
    require(config != nullptr, "config is null");
    config->value.scene.seed = seed;
    config->value.train.seed = seed;
    config->value.probe.seed = seed;
  });
}

fmba_status fmba_config_set_mode(fmba_config* config, const char* mode, double lambda) {
  return guarded([&] {
    require(config != nullptr && mode != nullptr, "null argument");
    fmba::SolverConfig s = config->value.solver;
    s.mode = fmba::parse_mode(mode);
    s.lambda = lambda;
    s.validate();
    config->value.solver = s;
    config->value.train.solver = s;
  });
}

void fmba_config_free(fmba_config* config) { delete config; }

fmba_status fmba_scene_generate(const fmba_config* config, uint64_t seed, fmba_scene** out) {
  return guarded([&] {
    require(config != nullptr && out != nullptr, "null argument");
    fmba::SceneSpec spec = config->value.scene;
    spec.seed = seed;
    *out = new fmba_scene{fmba::generate_scene(spec)};
  });
}

fmba_status fmba_scene_load(const char* dir, fmba_scene** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    *out = new fmba_scene{fmba::load_scene(dir)};
  });
}

fmba_status fmba_scene_save(const fmba_scene* scene, const char* dir) {
  return guarded([&] {
    require(scene != nullptr && dir != nullptr, "null argument");
    fmba::save_scene(scene->value, dir);
  });
}

fmba_status fmba_scene_view_count(const fmba_scene* scene, int* out) {
  return guarded([&] {
    require(scene != nullptr && out != nullptr, "null argument");
    *out = scene->value.views();
  });
}

void fmba_scene_free(fmba_scene* scene) { delete scene; }

fmba_status fmba_params_init(const fmba_config* config, uint64_t seed, fmba_params** out) {
  return guarded([&] {
    require(config != nullptr && out != nullptr, "null argument");
    const auto& c = config->value;
    fmba::TrainableParams p =
        fmba::make_params(c.model_shape(), seed, fmba::prior_weights(c.scene.basis_count), c.initial_lambda);
    *out = new fmba_params{std::move(p)};
  });
}

fmba_status fmba_params_load(const char* path, fmba_params** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new fmba_params{fmba::load_checkpoint(path)};
  });
}

fmba_status fmba_params_save(const fmba_params* params, const char* path) {
  return guarded([&] {
    require(params != nullptr && path != nullptr, "null argument");
    fmba::save_checkpoint(path, params->value);
  });
}

fmba_status fmba_params_count(const fmba_params* params, size_t* out) {
  return guarded([&] {
    require(params != nullptr && out != nullptr, "null argument");
    *out = params->value.parameter_count();
  });
}

void fmba_params_free(fmba_params* params) { delete params; }

fmba_status fmba_solve(const fmba_params* params, const fmba_scene* scene, const fmba_config* config,
                       fmba_result** out) {
  return guarded([&] {
    require(params != nullptr && scene != nullptr && config != nullptr && out != nullptr, "null argument");
    auto* r = new fmba_result{};
    try {
      r->pass = fmba::forward_solve(params->value, scene->value, config->value.solver, false);
      r->metrics = fmba::evaluate_solve(r->pass.result.state, r->pass.depth, scene->value);
    } catch (...) {
      delete r;
      throw;
    }
    *out = r;
  });
}

fmba_status fmba_result_metrics_json(const fmba_result* result, char** out) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    *out = copy_string(result->metrics.to_json());
  });
}

fmba_status fmba_result_trace_csv(const fmba_result* result, char** out) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    *out = copy_string(result->pass.result.trace.to_csv());
  });
}

fmba_status fmba_result_save(const fmba_result* result, const char* dir) {
  return guarded([&] {
    require(result != nullptr && dir != nullptr, "null argument");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw fmba::Error(fmba::ErrorCode::kIo, "cannot create directory " + std::string(dir));
    const std::filesystem::path base(dir);
    fmba::write_poses((base / "poses.txt").string(), result->pass.result.state.poses);
    fmba::write_fgrid((base / "depth.fgrid").string(), result->pass.depth);
  });
}

fmba_status fmba_result_view_count(const fmba_result* result, int* out) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    *out = static_cast<int>(result->pass.result.state.poses.size());
  });
}

fmba_status fmba_result_pose(const fmba_result* result, int view, double out[7]) {
  return guarded([&] {
    require(result != nullptr && out != nullptr, "null argument");
    const auto& poses = result->pass.result.state.poses;
    if (view < 0 || view >= static_cast<int>(poses.size())) {
      throw fmba::Error(fmba::ErrorCode::kIndexOutOfRange, "view index out of range");
    }
    const fmba::Pose& p = poses[static_cast<std::size_t>(view)];
    const fmba::Quaternion q = fmba::to_quaternion(p.rotation);
    const double values[7] = {q.w, q.x, q.y, q.z, p.translation.x(), p.translation.y(), p.translation.z()};
    std::memcpy(out, values, sizeof(values));
  });
}

void fmba_result_free(fmba_result* result) { delete result; }

fmba_status fmba_train(const fmba_config* config, const fmba_params* init, fmba_params** out, char** loss_csv,
                       int* skipped) {
  return guarded([&] {
    require(config != nullptr && init != nullptr && out != nullptr, "null argument");
    const auto& c = config->value;
    std::vector<fmba::SyntheticScene> scenes;
    for (const auto seed : fmba::seed_range(c.train_set.scene_seed, c.train_set.scene_count)) {
      fmba::SceneSpec spec = c.scene;
      spec.seed = seed;
      scenes.push_back(fmba::generate_scene(spec));
    }
    fmba::TrainConfig tc = c.train;
    tc.solver = c.solver;
    fmba::TrainResult r = fmba::train(init->value, scenes, tc);
    std::string csv = r.loss_csv();
    auto* p = new fmba_params{std::move(r.params)};
    if (loss_csv != nullptr) *loss_csv = copy_string(csv);
    if (skipped != nullptr) *skipped = r.skipped_solves;
    *out = p;
  });
}

fmba_status fmba_ablate(const fmba_config* config, const char* suite, const fmba_params* params, char** csv) {
  return guarded([&] {
    require(config != nullptr && suite != nullptr && params != nullptr && csv != nullptr, "null argument");
    const auto& c = config->value;
    fmba::AblationParams a;
    a.scene = c.scene;
    a.seeds = fmba::seed_range(c.ablation.seed_first, c.ablation.seed_count);
    a.solver = c.solver;
    a.lambdas = c.ablation.lambdas;
    a.view_counts = c.ablation.view_counts;
    *csv = copy_string(fmba::run_ablation(fmba::parse_suite(suite), a, params->value).to_csv());
  });
}

fmba_status fmba_eval_files(const char* pred_poses, const char* gt_poses, const char* pred_depth,
                            const char* gt_depth, char** json) {
  return guarded([&] {
    require(json != nullptr, "output pointer is null");
    require(pred_poses != nullptr && gt_poses != nullptr, "both pose files are required");
    require((pred_depth == nullptr) == (gt_depth == nullptr), "depth files must be given together");
    fmba::MetricsReport m;
    {
      const auto pred = fmba::read_poses(pred_poses);
      const auto gt = fmba::read_poses(gt_poses);
      if (pred.size() != gt.size()) {
        throw fmba::Error(fmba::ErrorCode::kLengthMismatch, "pose files hold different numbers of frames");
      }
      m.pose = fmba::pose_metrics(pred, gt);
      if (pred.size() >= 2) m.ate = fmba::ate(fmba::camera_centers(pred), fmba::camera_centers(gt));
    }
    if (pred_depth != nullptr) {
      m.depth = fmba::depth_metrics(fmba::read_fgrid(pred_depth), fmba::read_fgrid(gt_depth));
    }
    *json = copy_string(m.to_json());
  });
}

}  // extern "C"
