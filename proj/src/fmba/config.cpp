#include "fmba/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fmba {

namespace {

using nlohmann::json;

/// Reads the keys of one section and rejects anything it did not ask for.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    obj_ = &root.at(name_);
    if (!obj_->is_object()) throw Error(ErrorCode::kInvalidArgument, "config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
        out = v.get<double>();
      } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        out = v.get<T>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
        out = v.get<bool>();
      } else {
        out = v.get<T>();
      }
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, "config key " + name_ + "." + key + ": " + e.what());
    }
  }

  /// Nested object handed back for its own Section.
  const json* sub(const char* key) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }

  void finish() const {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config key " + name_ + "." + key);
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
void get_enum(Section& s, const char* key, E& out, Parse parse) {
  std::string name;
  s.get(key, name);
  if (!name.empty()) out = parse(name);
}

}  // namespace

ModelShape RunConfig::model_shape() const { return {scene.channels, feature_channels, scene.basis_count}; }

void RunConfig::validate() const {
  scene.validate();
  solver.validate();
  train.validate();
  model_shape().validate();
  if (!(initial_lambda > 0.0)) throw Error(ErrorCode::kInvalidArgument, "model.initial_lambda must be positive");
  if (train_set.scene_count < 1) throw Error(ErrorCode::kInvalidArgument, "train.scene_count must be at least 1");
  if (ablation.seed_count < 1) throw Error(ErrorCode::kInvalidArgument, "ablation.seed_count must be at least 1");
  for (double l : ablation.lambdas) {
    if (!(l >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "ablation.lambdas must be nonnegative");
  }
  for (int n : ablation.view_counts) {
    if (n < 2 || n > 5) throw Error(ErrorCode::kInvalidArgument, "ablation.view_counts entries must be in [2, 5]");
  }
  if (probe.probes < 1 || probe.radius < 1 || !(probe.step > 0.0) || probe.level < 0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid probe section");
  }
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
  for (const auto& [key, value] : root.items()) {
    static const std::set<std::string> sections = {"scene", "solver", "model", "train", "ablation", "probe"};
    if (!sections.count(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config section '" + key + "'");
  }

  RunConfig c;
  {
    Section s(root, "scene");
    auto& p = c.scene;
    s.get("width", p.width);
    s.get("height", p.height);
    s.get("views", p.views);
    get_enum(s, "family", p.family, parse_family);
    s.get("mean_depth", p.mean_depth);
    s.get("depth_variation", p.depth_variation);
    s.get("plane_tilt_deg", p.plane_tilt_deg);
    s.get("rotation_deg", p.rotation_deg);
    s.get("translation", p.translation);
    s.get("intensity", p.intensity);
    s.get("noise", p.noise);
    s.get("channels", p.channels);
    s.get("basis_count", p.basis_count);
    s.get("focal_scale", p.focal_scale);
    s.get("seed", p.seed);
    s.finish();
  }
  {
    Section s(root, "solver");
    auto& p = c.solver;
    get_enum(s, "mode", p.mode, parse_mode);
    s.get("lambda", p.lambda);
    s.get("levels", p.levels);
    s.get("iterations_per_level", p.iterations_per_level);
    s.get("lambda_floor", p.lambda_floor);
    s.get("residual_scale", p.residual_scale);
    s.get("stride", p.stride);
    s.get("scale_gauge", p.scale_gauge);
    s.get("max_iterations", p.max_iterations);
    s.get("convergence_threshold", p.convergence_threshold);
    s.get("initial_lambda", p.initial_lambda);
    s.finish();
  }
  {
    Section s(root, "model");
    s.get("feature_channels", c.feature_channels);
    s.get("initial_lambda", c.initial_lambda);
    s.finish();
  }
  {
    Section s(root, "train");
    auto& p = c.train;
    s.get("learning_rate", p.learning_rate);
    s.get("steps", p.steps);
    s.get("batch_size", p.batch_size);
    get_enum(s, "schedule", p.schedule, parse_schedule);
    s.get("halve_every", p.halve_every);
    s.get("plateau_window", p.plateau_window);
    s.get("plateau_tolerance", p.plateau_tolerance);
    std::string groups;
    s.get("groups", groups);
    if (!groups.empty()) p.groups = parse_groups(groups);
    s.get("seed", p.seed);
    s.get("scene_seed", c.train_set.scene_seed);
    s.get("scene_count", c.train_set.scene_count);
    if (const json* w = s.sub("loss_weights")) {
      const json wrapper = {{"train.loss_weights", *w}};
      Section ws(wrapper, "train.loss_weights");
      ws.get("rotation", p.weights.rotation);
      ws.get("translation", p.weights.translation);
      ws.get("depth", p.weights.depth);
      ws.finish();
    }
    s.finish();
  }
  {
    Section s(root, "ablation");
    auto& p = c.ablation;
    s.get("seed_first", p.seed_first);
    s.get("seed_count", p.seed_count);
    s.get("lambdas", p.lambdas);
    s.get("view_counts", p.view_counts);
    s.finish();
  }
  {
    Section s(root, "probe");
    auto& p = c.probe;
    s.get("probes", p.probes);
    s.get("radius", p.radius);
    s.get("step", p.step);
    s.get("level", p.level);
    s.finish();
  }
  c.train.solver = c.solver;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  const auto& sc = c.scene;
  const auto& so = c.solver;
  const auto& t = c.train;
  json j;
  j["scene"] = {{"width", sc.width},
                {"height", sc.height},
                {"views", sc.views},
                {"family", family_name(sc.family)},
                {"mean_depth", sc.mean_depth},
                {"depth_variation", sc.depth_variation},
                {"plane_tilt_deg", sc.plane_tilt_deg},
                {"rotation_deg", sc.rotation_deg},
                {"translation", sc.translation},
                {"intensity", sc.intensity},
                {"noise", sc.noise},
                {"channels", sc.channels},
                {"basis_count", sc.basis_count},
                {"focal_scale", sc.focal_scale},
                {"seed", sc.seed}};
  j["solver"] = {{"mode", mode_name(so.mode)},
                 {"lambda", so.lambda},
                 {"levels", so.levels},
                 {"iterations_per_level", so.iterations_per_level},
                 {"lambda_floor", so.lambda_floor},
                 {"residual_scale", so.residual_scale},
                 {"stride", so.stride},
                 {"scale_gauge", so.scale_gauge},
                 {"max_iterations", so.max_iterations},
                 {"convergence_threshold", so.convergence_threshold},
                 {"initial_lambda", so.initial_lambda}};
  j["model"] = {{"feature_channels", c.feature_channels}, {"initial_lambda", c.initial_lambda}};
  j["train"] = {{"learning_rate", t.learning_rate},
                {"steps", t.steps},
                {"batch_size", t.batch_size},
                {"schedule", schedule_name(t.schedule)},
                {"halve_every", t.halve_every},
                {"plateau_window", t.plateau_window},
                {"plateau_tolerance", t.plateau_tolerance},
                {"groups", groups_name(t.groups)},
                {"seed", t.seed},
                {"scene_seed", c.train_set.scene_seed},
                {"scene_count", c.train_set.scene_count},
                {"loss_weights",
                 {{"rotation", t.weights.rotation}, {"translation", t.weights.translation}, {"depth", t.weights.depth}}}};
  j["ablation"] = {{"seed_first", c.ablation.seed_first},
                   {"seed_count", c.ablation.seed_count},
                   {"lambdas", c.ablation.lambdas},
                   {"view_counts", c.ablation.view_counts}};
  j["probe"] = {{"probes", c.probe.probes},
                {"radius", c.probe.radius},
                {"step", c.probe.step},
                {"level", c.probe.level}};
  return j.dump(2) + "\n";
}

}  // namespace fmba
