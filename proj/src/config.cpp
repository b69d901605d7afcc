#include "hperl/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hperl {

std::string to_string(InputMode m) { return m == InputMode::fusion ? "fusion" : "rgb"; }
std::string to_string(FusionOp f) { return f == FusionOp::concat ? "concat" : "mean"; }
std::string to_string(RoiOp r) { return r == RoiOp::align ? "align" : "pool"; }
std::string to_string(nn::Optimizer::Kind k) { return k == nn::Optimizer::Kind::adam ? "adam" : "rmsprop"; }

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("config key '" + key + "': cannot use '" + value + "' (expected " + want + ")");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  const char* s = v.c_str();
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(s, &end);
  if (v.empty() || end != s + v.size() || errno == ERANGE) bad(key, v, "a number");
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  bad(key, v, "a boolean");
}

std::string fmt(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

template <typename Enum>
Enum parse_enum(const std::string& key, const std::string& v,
                std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string names;
  for (const auto& [n, e] : options) {
    if (v == n) return e;
    names += names.empty() ? n : std::string("|") + n;
  }
  bad(key, v, names);
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  auto add = [&](std::string name, std::string help, auto set, auto get) {
    k.push_back({std::move(name), std::move(help), set, get});
  };
#define HPERL_DOUBLE(NAME, FIELD, HELP)                                                       \
  add(NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); })
#define HPERL_INT(NAME, FIELD, HELP)                                                                      \
  add(NAME, HELP,                                                                                         \
      [](RunConfig& c, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(parse_int(NAME, v)); }, \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define HPERL_BOOL(NAME, FIELD, HELP)                                                       \
  add(NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }, \
      [](const RunConfig& c) { return std::string(c.FIELD ? "1" : "0"); })
#define HPERL_STRING(NAME, FIELD, HELP)                                        \
  add(NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = v; }, \
      [](const RunConfig& c) { return c.FIELD; })

  add("preset", "named base configuration (fusion, rgb_baseline, desk)",
      [](RunConfig& c, const std::string& v) { c.preset = v; }, [](const RunConfig& c) { return c.preset; });
  add("seed", "seed for data generation, initialization and sampling",
      [](RunConfig& c, const std::string& v) {
        const auto s = static_cast<std::uint64_t>(parse_int("seed", v));
        c.model.seed = s;
        c.data.seed = s;
      },
      [](const RunConfig& c) { return std::to_string(c.model.seed); });

  // Paths and command options.
  HPERL_STRING("dataset", dataset_dir, "dataset directory");
  HPERL_STRING("out", out_dir, "output directory");
  HPERL_STRING("checkpoint", checkpoint, "checkpoint to evaluate");
  HPERL_STRING("resume", resume, "checkpoint to resume training from");
  HPERL_STRING("split", split, "evaluation split (train|eval)");
  HPERL_STRING("predictor", predictor, "eval predictions: model or oracle (ground truth)");
  HPERL_STRING("ablate_modes", ablate_modes, "ablation input modes (comma list of fusion,rgb)");
  HPERL_STRING("ablate_fusion", ablate_fusion, "ablation fusion ops (comma list of concat,mean)");
  HPERL_STRING("ablate_roi", ablate_roi, "ablation RoI ops (comma list of align,pool)");
  HPERL_STRING("ablate_flip", ablate_flip, "ablation flip augmentation (comma list of on,off)");

  // Dataset.
  HPERL_INT("scenes", data.scenes, "number of scenes");
  HPERL_INT("min_pedestrians", data.min_pedestrians, "fewest pedestrians per scene");
  HPERL_INT("max_pedestrians", data.max_pedestrians, "most pedestrians per scene");
  HPERL_DOUBLE("eval_fraction", data.eval_fraction, "share of scenes in the eval split");
  HPERL_DOUBLE("depth_min", data.scene.depth_min, "nearest pedestrian depth (m)");
  HPERL_DOUBLE("depth_max", data.scene.depth_max, "farthest pedestrian depth (m)");
  HPERL_DOUBLE("occlusion_rate", data.scene.occlusion_rate, "probability of an occluder per pedestrian");
  HPERL_INT("clutter", data.scene.clutter, "background blocks per scene");
  HPERL_INT("min_points", data.scene.min_points, "LiDAR returns required per unoccluded pedestrian");
  HPERL_DOUBLE("camera_height", data.scene.camera_height, "camera height above ground (m)");
  HPERL_DOUBLE("joint_noise", data.scene.joint_noise, "joint noise as a fraction of body height");
  HPERL_DOUBLE("max_yaw", data.scene.max_yaw, "largest body yaw (rad)");
  HPERL_DOUBLE("height_min", data.scene.height_min, "smallest pedestrian height (m)");
  HPERL_DOUBLE("height_max", data.scene.height_max, "largest pedestrian height (m)");
  HPERL_DOUBLE("image_noise", data.scene.image_noise, "pixel noise standard deviation");

  // Model.
  add("mode", "input mode (fusion|rgb)",
      [](RunConfig& c, const std::string& v) {
        c.model.mode = parse_enum<InputMode>("mode", v, {{"fusion", InputMode::fusion}, {"rgb", InputMode::rgb}});
      },
      [](const RunConfig& c) { return to_string(c.model.mode); });
  add("fusion", "stage-2 view fusion (concat|mean)",
      [](RunConfig& c, const std::string& v) {
        c.model.fusion = parse_enum<FusionOp>("fusion", v, {{"concat", FusionOp::concat}, {"mean", FusionOp::mean}});
      },
      [](const RunConfig& c) { return to_string(c.model.fusion); });
  add("roi_op", "feature crop (align|pool)",
      [](RunConfig& c, const std::string& v) {
        c.model.roi_op = parse_enum<RoiOp>("roi_op", v, {{"align", RoiOp::align}, {"pool", RoiOp::pool}});
      },
      [](const RunConfig& c) { return to_string(c.model.roi_op); });
  HPERL_INT("channels", model.channels, "backbone output channels");
  HPERL_INT("num_poses", model.num_poses, "anchor poses K");
  HPERL_INT("joints", model.joints, "joints J");
  HPERL_INT("gn_groups", model.gn_groups, "group-norm groups");
  HPERL_INT("stage1_channels", model.stage1_channels, "per-view channels after the stage-1 projection");
  HPERL_INT("stage1_crop", model.stage1_crop, "stage-1 crop size");
  HPERL_INT("stage2_crop", model.stage2_crop, "stage-2 crop size");
  HPERL_INT("stage1_hidden", model.stage1_hidden, "stage-1 hidden units");
  HPERL_INT("stage2_hidden", model.stage2_hidden, "stage-2 hidden units");
  HPERL_DOUBLE("bev_resolution", model.bev_resolution, "BEV cell size (m)");
  HPERL_INT("rpn_batch", model.rpn_batch, "sampled anchors per step");
  HPERL_DOUBLE("rpn_pos_iou", model.rpn_pos_iou, "anchor positive IoU");
  HPERL_DOUBLE("rpn_neg_iou", model.rpn_neg_iou, "anchor negative IoU");
  HPERL_INT("pre_nms_top", model.pre_nms_top, "proposals considered by NMS");
  HPERL_DOUBLE("nms_iou", model.nms_iou, "proposal NMS IoU");
  HPERL_INT("top_n", model.top_n, "proposals kept after NMS");
  HPERL_DOUBLE("image_anchor_stride", model.image_anchor_stride, "RGB anchor lattice stride (px)");
  add("image_anchor_heights", "RGB anchor heights (px, comma list)",
      [](RunConfig& c, const std::string& v) { c.model.image_anchor_heights = parse_list("image_anchor_heights", v); },
      [](const RunConfig& c) { return fmt_list(c.model.image_anchor_heights); });
  HPERL_DOUBLE("image_anchor_aspect", model.image_anchor_aspect, "RGB anchor width/height");
  HPERL_DOUBLE("fg_iou", model.fg_iou, "RoI foreground IoU");
  HPERL_DOUBLE("smooth_l1_beta", model.smooth_l1_beta, "smooth L1 transition point");
  HPERL_DOUBLE("w_rpn_obj", model.weights.rpn_obj, "loss weight: proposal objectness");
  HPERL_DOUBLE("w_rpn_reg", model.weights.rpn_reg, "loss weight: proposal regression");
  HPERL_DOUBLE("w_cls", model.weights.cls, "loss weight: anchor-pose classification");
  HPERL_DOUBLE("w_2d", model.weights.pose_2d, "loss weight: 2D pose");
  HPERL_DOUBLE("w_3d", model.weights.pose_3d, "loss weight: projected 3D pose");
  HPERL_DOUBLE("det_score", model.det_score, "detection score kept for integration");
  HPERL_DOUBLE("integration_iou", model.integration.iou_threshold, "pose integration IoU");
  HPERL_DOUBLE("score_floor", model.integration.score_floor, "pose integration score floor");
  HPERL_DOUBLE("eval_match_iou", model.eval_match_iou, "prediction-to-gt matching IoU");
  HPERL_INT("ransac_iterations", model.ransac_iterations, "ground fit iterations");
  HPERL_DOUBLE("ransac_threshold", model.ransac_threshold, "ground fit inlier distance (m)");

  // Training.
  add("optimizer", "update rule (adam|rmsprop)",
      [](RunConfig& c, const std::string& v) {
        c.model.optimizer = parse_enum<nn::Optimizer::Kind>(
            "optimizer", v, {{"adam", nn::Optimizer::Kind::adam}, {"rmsprop", nn::Optimizer::Kind::rmsprop}});
      },
      [](const RunConfig& c) { return to_string(c.model.optimizer); });
  HPERL_DOUBLE("learning_rate", model.learning_rate, "initial learning rate");
  HPERL_DOUBLE("lr_decay", model.lr_decay, "learning-rate factor per decay period");
  HPERL_INT("lr_decay_every", model.lr_decay_every, "decay period in epochs (0 = never)");
  HPERL_INT("epochs", model.epochs, "training epochs");
  HPERL_INT("batch_size", model.batch_size, "scenes per update");
  HPERL_BOOL("flip_augment", model.flip_augment, "random horizontal flips");
  HPERL_BOOL("swap_lr_on_flip", model.swap_lr_on_flip, "swap left/right joint labels when flipping");
  HPERL_DOUBLE("divergence_threshold", model.divergence_threshold, "loss above which training aborts");
#undef HPERL_DOUBLE
#undef HPERL_INT
#undef HPERL_BOOL
#undef HPERL_STRING
  return k;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  data.validate();
  if (split != "train" && split != "eval") throw ConfigError("split must be train or eval");
  if (predictor != "model" && predictor != "oracle") throw ConfigError("predictor must be model or oracle");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::vector<std::string> preset_names() { return {"fusion", "rgb_baseline", "desk"}; }

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "fusion") return c;
  if (name == "rgb_baseline") {
    c.model.mode = InputMode::rgb;
    c.model.optimizer = nn::Optimizer::Kind::rmsprop;
    c.model.learning_rate = 1e-3;
    c.model.batch_size = 4;
    c.model.epochs = 170;
    c.model.lr_decay = 0.8;
    c.model.lr_decay_every = 50;
    return c;
  }
  if (name == "desk") {
    // Short schedule for CPU runs of the fusion/RGB comparison.
    c.model.learning_rate = 1e-3;
    c.model.epochs = 12;
    c.model.lr_decay = 0.3;
    c.model.lr_decay_every = 8;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

void apply_key_values(RunConfig& cfg, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (!find_config_key(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  for (const auto& k : config_keys()) {
    if (k.name == "preset") continue;
    const auto it = kv.find(k.name);
    if (it != kv.end()) k.set(cfg, it->second);
  }
}

RunConfig resolve_config(const KeyValues& file, const KeyValues& overrides) {
  std::string preset = "fusion";
  if (auto it = file.find("preset"); it != file.end()) preset = it->second;
  if (auto it = overrides.find("preset"); it != overrides.end()) preset = it->second;
  RunConfig cfg = preset_config(preset);
  apply_key_values(cfg, file);
  apply_key_values(cfg, overrides);
  cfg.validate();
  return cfg;
}

std::string config_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& k : config_keys()) s += k.name + " = " + k.get(cfg) + "\n";
  return s;
}

RunConfig config_from_text(const std::string& text) { return resolve_config({}, parse_key_values(text)); }

}  // namespace hperl
