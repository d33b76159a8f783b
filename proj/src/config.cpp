#include "sed/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace sed {

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("config: iterations must be >= 1");
  // burn_in == iterations is the degenerate supervised-only schedule
  if (burn_in_iterations < 0 || burn_in_iterations > iterations)
    throw ConfigError("config: burn_in_iterations must be in [0, iterations]");
  if (batch_labeled < 1) throw ConfigError("config: batch_labeled must be >= 1");
  if (batch_unlabeled < 0) throw ConfigError("config: batch_unlabeled must be >= 0");
  if (!(lr > 0)) throw ConfigError("config: lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("config: momentum must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
  if (scale_max_exponent < 1) throw ConfigError("config: scale_max_exponent must be >= 1");
  if (reweight_bins < 1) throw ConfigError("config: reweight_bins must be >= 1");
  if (!(distill_tau_bg <= distill_tau)) throw ConfigError("config: distill_tau_bg must be <= distill_tau");
  if (!(fg_iou_threshold >= bg_iou_threshold) || bg_iou_threshold < 0 || fg_iou_threshold > 1)
    throw ConfigError("config: need 0 <= bg_iou_threshold <= fg_iou_threshold <= 1");
  if (cls_sample_size < 0) throw ConfigError("config: cls_sample_size must be >= 0");
  if (!(cls_sample_fg_fraction > 0) || cls_sample_fg_fraction > 1)
    throw ConfigError("config: cls_sample_fg_fraction must be in (0, 1]");
  ema.validate();
}

void RunConfig::validate() const {
  try {
    data.validate();
    arch.validate();
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  const int div = 4 << (arch.num_levels - 1) << train.scale_max_exponent;
  if (data.image_size % div != 0)
    throw ConfigError("config: image_size must be divisible by max_stride * 2^scale_max_exponent (" +
                      std::to_string(div) + ")");
}

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_num(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (is.fail() || !is.eof()) throw ConfigError("config: bad value for key '" + key + "': " + s);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean for key '" + key + "': " + s);
}

std::string num_to_str(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

const std::vector<Field>& schema() {
  auto num = [](auto getter, auto setter) {
    return std::make_pair(getter, setter);
  };
  (void)num;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto add_int = [&f](const std::string& key, std::function<int&(RunConfig&)> ref) {
      f.push_back({key,
                   [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                   [key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_num<int>(key, s); }});
    };
    auto add_u64 = [&f](const std::string& key, std::function<uint64_t&(RunConfig&)> ref) {
      f.push_back({key,
                   [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                   [key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_num<uint64_t>(key, s); }});
    };
    auto add_i64 = [&f](const std::string& key, std::function<int64_t&(RunConfig&)> ref) {
      f.push_back({key,
                   [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
                   [key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_num<int64_t>(key, s); }});
    };
    auto add_double = [&f](const std::string& key, std::function<double&(RunConfig&)> ref) {
      f.push_back({key,
                   [ref](const RunConfig& c) { return num_to_str(ref(const_cast<RunConfig&>(c))); },
                   [key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_num<double>(key, s); }});
    };
    auto add_bool = [&f](const std::string& key, std::function<bool&(RunConfig&)> ref) {
      f.push_back({key,
                   [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)) ? "true" : "false"; },
                   [key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_bool(key, s); }});
    };

    f.push_back({"schema_version", [](const RunConfig&) { return std::to_string(kConfigSchemaVersion); },
                 [](RunConfig&, const std::string& s) {
                   if (parse_num<int>("schema_version", s) != kConfigSchemaVersion)
                     throw ConfigError("config: unsupported schema_version " + s);
                 }});

    add_u64("seed", [](RunConfig& c) -> uint64_t& { return c.data.master_seed; });

    // dataset
    add_int("image_size", [](RunConfig& c) -> int& { return c.data.image_size; });
    add_int("num_train_scenes", [](RunConfig& c) -> int& { return c.data.num_train_scenes; });
    add_int("num_test_scenes", [](RunConfig& c) -> int& { return c.data.num_test_scenes; });
    add_double("labeled_fraction", [](RunConfig& c) -> double& { return c.data.labeled_fraction; });
    add_int("max_objects", [](RunConfig& c) -> int& { return c.data.max_objects; });
    add_double("min_object_size", [](RunConfig& c) -> double& { return c.data.min_object_size; });
    add_double("max_object_size", [](RunConfig& c) -> double& { return c.data.max_object_size; });
    add_int("max_clutter", [](RunConfig& c) -> int& { return c.data.max_clutter; });
    add_double("noise_amplitude", [](RunConfig& c) -> double& { return c.data.noise_amplitude; });

    // architecture
    add_int("arch_stem_channels1", [](RunConfig& c) -> int& { return c.arch.stem_channels1; });
    add_int("arch_stem_channels2", [](RunConfig& c) -> int& { return c.arch.stem_channels2; });
    add_int("arch_head_channels", [](RunConfig& c) -> int& { return c.arch.head_channels; });
    add_int("arch_num_levels", [](RunConfig& c) -> int& { return c.arch.num_levels; });
    add_double("anchor_base", [](RunConfig& c) -> double& { return c.arch.anchor_base; });

    // augmentation (defaults pinned to the strong/weak recipe)
    add_double("weak_resize_min", [](RunConfig& c) -> double& { return c.augment.weak_resize_min; });
    add_double("weak_resize_max", [](RunConfig& c) -> double& { return c.augment.weak_resize_max; });
    add_double("flip_prob", [](RunConfig& c) -> double& { return c.augment.flip_prob; });
    add_double("color_jitter_prob", [](RunConfig& c) -> double& { return c.augment.jitter_prob; });
    add_double("color_jitter_min", [](RunConfig& c) -> double& { return c.augment.jitter_min; });
    add_double("color_jitter_max", [](RunConfig& c) -> double& { return c.augment.jitter_max; });
    add_double("grayscale_prob", [](RunConfig& c) -> double& { return c.augment.grayscale_prob; });
    add_double("blur_prob", [](RunConfig& c) -> double& { return c.augment.blur_prob; });
    add_double("blur_sigma_min", [](RunConfig& c) -> double& { return c.augment.blur_sigma_min; });
    add_double("blur_sigma_max", [](RunConfig& c) -> double& { return c.augment.blur_sigma_max; });
    add_double("cutout_fill", [](RunConfig& c) -> double& { return c.augment.cutout_fill; });
    for (int i = 0; i < 3; ++i) {
      const std::string p = "cutout" + std::to_string(i + 1) + "_";
      add_double(p + "prob", [i](RunConfig& c) -> double& { return c.augment.cutouts[static_cast<size_t>(i)].prob; });
      add_double(p + "scale_min", [i](RunConfig& c) -> double& { return c.augment.cutouts[static_cast<size_t>(i)].scale_min; });
      add_double(p + "scale_max", [i](RunConfig& c) -> double& { return c.augment.cutouts[static_cast<size_t>(i)].scale_max; });
      add_double(p + "ratio_min", [i](RunConfig& c) -> double& { return c.augment.cutouts[static_cast<size_t>(i)].ratio_min; });
      add_double(p + "ratio_max", [i](RunConfig& c) -> double& { return c.augment.cutouts[static_cast<size_t>(i)].ratio_max; });
    }

    // training
    add_int("iterations", [](RunConfig& c) -> int& { return c.train.iterations; });
    add_int("burn_in_iterations", [](RunConfig& c) -> int& { return c.train.burn_in_iterations; });
    add_int("batch_labeled", [](RunConfig& c) -> int& { return c.train.batch_labeled; });
    add_int("batch_unlabeled", [](RunConfig& c) -> int& { return c.train.batch_unlabeled; });
    add_double("lr", [](RunConfig& c) -> double& { return c.train.lr; });
    add_double("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    add_double("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    f.push_back({"lr_milestones",
                 [](const RunConfig& c) {
                   std::string out;
                   for (size_t i = 0; i < c.train.lr_milestones.size(); ++i)
                     out += (i ? "," : "") + std::to_string(c.train.lr_milestones[i]);
                   return out.empty() ? std::string("none") : out;
                 },
                 [](RunConfig& c, const std::string& s) {
                   c.train.lr_milestones.clear();
                   if (s == "none" || s.empty()) return;
                   std::istringstream is(s);
                   std::string tok;
                   while (std::getline(is, tok, ','))
                     c.train.lr_milestones.push_back(parse_num<int>("lr_milestones", tok));
                 }});
    add_double("lr_gamma", [](RunConfig& c) -> double& { return c.train.lr_gamma; });
    add_double("lambda_scale", [](RunConfig& c) -> double& { return c.train.lambda_scale; });
    add_double("lambda_distill", [](RunConfig& c) -> double& { return c.train.lambda_distill; });
    add_int("scale_max_exponent", [](RunConfig& c) -> int& { return c.train.scale_max_exponent; });
    add_int("reweight_bins", [](RunConfig& c) -> int& { return c.train.reweight_bins; });
    add_bool("reweight_scale", [](RunConfig& c) -> bool& { return c.train.reweight_scale; });
    add_bool("reweight_distill", [](RunConfig& c) -> bool& { return c.train.reweight_distill; });
    f.push_back({"distill_mode",
                 [](const RunConfig& c) {
                   return std::string(c.train.distill_mode == DistillMode::kSoft ? "soft" : "hard");
                 },
                 [](RunConfig& c, const std::string& s) {
                   if (s == "soft") c.train.distill_mode = DistillMode::kSoft;
                   else if (s == "hard") c.train.distill_mode = DistillMode::kHard;
                   else throw ConfigError("config: distill_mode must be soft|hard, got " + s);
                 }});
    add_double("distill_tau", [](RunConfig& c) -> double& { return c.train.distill_tau; });
    add_double("distill_tau_bg", [](RunConfig& c) -> double& { return c.train.distill_tau_bg; });
    f.push_back({"ema_policy",
                 [](const RunConfig& c) { return to_string(c.train.ema.policy); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.train.ema.policy = ema_policy_from_string(s);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 }});
    add_double("ema_alpha_start", [](RunConfig& c) -> double& { return c.train.ema.alpha_start; });
    add_double("ema_alpha_end", [](RunConfig& c) -> double& { return c.train.ema.alpha_end; });
    add_i64("ema_milestone", [](RunConfig& c) -> int64_t& { return c.train.ema.milestone_iteration; });
    add_double("fg_iou_threshold", [](RunConfig& c) -> double& { return c.train.fg_iou_threshold; });
    add_double("bg_iou_threshold", [](RunConfig& c) -> double& { return c.train.bg_iou_threshold; });
    add_int("cls_sample_size", [](RunConfig& c) -> int& { return c.train.cls_sample_size; });
    add_double("cls_sample_fg_fraction", [](RunConfig& c) -> double& { return c.train.cls_sample_fg_fraction; });
    add_double("eval_score_threshold", [](RunConfig& c) -> double& { return c.train.eval_score_threshold; });
    add_double("eval_nms_threshold", [](RunConfig& c) -> double& { return c.train.eval_nms_threshold; });
    add_int("eval_interval", [](RunConfig& c) -> int& { return c.train.eval_interval; });
    add_int("checkpoint_interval", [](RunConfig& c) -> int& { return c.train.checkpoint_interval; });
    return f;
  }();
  return fields;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : schema())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) throw ConfigError("config: unknown key '" + key + "'");
    f->set(cfg, value);
  }
  cfg.train.ema.total_iterations = cfg.train.iterations;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("config: unknown key '" + key + "'");
  f->set(cfg, value);
  cfg.train.ema.total_iterations = cfg.train.iterations;
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : schema()) keys.push_back(f.key);
  return keys;
}

}  // namespace sed
