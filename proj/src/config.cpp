#include "recondet/config.hpp"

#include <fstream>
#include <set>

#include "recondet/common.hpp"

namespace recondet {

namespace fs = std::filesystem;

namespace {

// Tracks which keys of one json object were consumed, so leftovers can be
// reported by their dotted path.
class Section {
 public:
  Section(const nlohmann::json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object())
      throw ConfigError("config section '" + label() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& into) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      into = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + path(key) + "' has the wrong type");
    }
  }

  void get(const char* key, std::filesystem::path& into) {
    std::string s = into.string();
    get(key, s);
    into = s;
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key: " + path(item.key()));
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

 private:
  std::string label() const { return prefix_.empty() ? std::string("<root>") : prefix_; }

  const nlohmann::json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace

fs::path RunConfig::data_dir() const {
  return paths.data.empty() ? out / "data" : fs::path(paths.data);
}
fs::path RunConfig::checkpoint_dir() const {
  return paths.checkpoints.empty() ? out / "checkpoints" : fs::path(paths.checkpoints);
}
fs::path RunConfig::cache_dir() const {
  return paths.cache.empty() ? out / "cache" : fs::path(paths.cache);
}
fs::path RunConfig::report_dir() const {
  return paths.reports.empty() ? out / "reports" : fs::path(paths.reports);
}

DiffusionSchedule RunConfig::make_schedule() const {
  return DiffusionSchedule::linear(schedule.timesteps, schedule.beta_start, schedule.beta_end);
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.image_size = image_size;
  c.base_channels = dm.base_channels;
  c.temb_dim = dm.temb_dim;
  c.temb_hidden = dm.temb_hidden;
  return c;
}

DenoiserTrainConfig RunConfig::denoiser_train() const {
  DenoiserTrainConfig c;
  c.steps = dm.steps;
  c.batch_size = dm.batch_size;
  c.lr = dm.lr;
  return c;
}

GanConfig RunConfig::gan_config() const {
  GanConfig c;
  c.image_size = image_size;
  c.z_dim = gan.z_dim;
  c.w_dim = gan.w_dim;
  c.wstar_dim = gan.wstar_dim;
  c.num_layers = gan.num_layers;
  c.channels = gan.channels;
  return c;
}

GanTrainConfig RunConfig::gan_train() const {
  GanTrainConfig c;
  c.steps = gan.steps;
  c.batch_size = gan.batch_size;
  c.lr = gan.lr;
  return c;
}

EncoderTrainConfig RunConfig::encoder_train() const {
  EncoderTrainConfig c;
  c.steps = gan.encoder_steps;
  c.batch_size = gan.batch_size;
  c.lr = gan.encoder_lr;
  return c;
}

DetectorConfig RunConfig::detector_config() const {
  DetectorConfig c;
  c.mode = parse_input_mode(detector.mode);
  c.backbone = detector.backbone;
  c.image_size = image_size;
  return c;
}

DetectorTrainConfig RunConfig::detector_train() const {
  DetectorTrainConfig c;
  c.epochs = detector.epochs;
  c.batch_size = detector.batch_size;
  c.lr = detector.lr;
  return c;
}

SplitSpec RunConfig::split_spec() const {
  SplitSpec s;
  s.train_models = split.train_models;
  s.test_models = split.test_models;
  s.train_per_model = split.train_per_model;
  s.test_per_model = split.test_per_model;
  s.train_real = split.train_real;
  s.test_real = split.test_real;
  return s;
}

ReconParams RunConfig::recon_params() const {
  ReconParams p;
  p.ddim_steps = schedule.sample_steps;
  p.refine_steps = recon.refine_steps;
  p.refine_lr = recon.refine_lr;
  p.batch = recon.batch;
  p.image_size = image_size;
  return p;
}

std::vector<PerturbSpec> RunConfig::perturb_grid() const {
  std::vector<PerturbSpec> grid;
  for (int level : robustness.blur_levels) grid.push_back({PerturbKind::GaussianBlur, level});
  for (int level : robustness.jpeg_levels) grid.push_back({PerturbKind::Jpeg, level});
  return grid;
}

void RunConfig::validate() const {
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
  if (toy.real_count < 1 || toy.gan_count < 0 || toy.dm_count < 0)
    throw ConfigError("toy counts must be positive (real) and non-negative (synthetic)");
  if (schedule.timesteps < 1) throw ConfigError("schedule.timesteps must be positive");
  if (schedule.sample_steps < 1 || schedule.sample_steps > schedule.timesteps)
    throw ConfigError("schedule.sample_steps must lie in [1, timesteps]");
  if (!(schedule.beta_start > 0) || !(schedule.beta_end >= schedule.beta_start) ||
      schedule.beta_end >= 1)
    throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  if (dm.steps < 1 || dm.batch_size < 1 || !(dm.lr > 0))
    throw ConfigError("dm training needs positive steps, batch_size and lr");
  if (gan.steps < 1 || gan.batch_size < 1 || !(gan.lr > 0) || gan.encoder_steps < 1 ||
      !(gan.encoder_lr > 0))
    throw ConfigError("gan training needs positive steps, batch_size and rates");
  if (recon.refine_steps < 0 || !(recon.refine_lr > 0) || recon.batch < 1)
    throw ConfigError("recon needs refine_steps >= 0, refine_lr > 0 and batch >= 1");
  if (detector.epochs < 1 || detector.batch_size < 1 || !(detector.lr > 0))
    throw ConfigError("detector training needs positive epochs, batch_size and lr");
  if (robustness.max_per_subset < 0)
    throw ConfigError("robustness.max_per_subset must be >= 0");
  gan_config().validate();
  detector_config().validate();
  if (dm.base_channels < 8 || dm.base_channels % 8 != 0)
    throw ConfigError("dm.base_channels must be a positive multiple of 8");
  for (const auto& spec : perturb_grid()) {
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
}

nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{
      {"seed", c.seed},
      {"image_size", c.image_size},
      {"out", c.out.string()},
      {"paths",
       {{"data", c.paths.data},
        {"checkpoints", c.paths.checkpoints},
        {"cache", c.paths.cache},
        {"reports", c.paths.reports}}},
      {"toy",
       {{"real_count", c.toy.real_count},
        {"gan_count", c.toy.gan_count},
        {"dm_count", c.toy.dm_count},
        {"real_source", c.toy.real_source}}},
      {"schedule",
       {{"timesteps", c.schedule.timesteps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"sample_steps", c.schedule.sample_steps}}},
      {"dm",
       {{"base_channels", c.dm.base_channels},
        {"temb_dim", c.dm.temb_dim},
        {"temb_hidden", c.dm.temb_hidden},
        {"steps", c.dm.steps},
        {"batch_size", c.dm.batch_size},
        {"lr", c.dm.lr}}},
      {"gan",
       {{"z_dim", c.gan.z_dim},
        {"w_dim", c.gan.w_dim},
        {"wstar_dim", c.gan.wstar_dim},
        {"num_layers", c.gan.num_layers},
        {"channels", c.gan.channels},
        {"steps", c.gan.steps},
        {"batch_size", c.gan.batch_size},
        {"lr", c.gan.lr},
        {"encoder_steps", c.gan.encoder_steps},
        {"encoder_lr", c.gan.encoder_lr}}},
      {"recon",
       {{"refine_steps", c.recon.refine_steps},
        {"refine_lr", c.recon.refine_lr},
        {"batch", c.recon.batch}}},
      {"detector",
       {{"mode", c.detector.mode},
        {"backbone", c.detector.backbone},
        {"epochs", c.detector.epochs},
        {"batch_size", c.detector.batch_size},
        {"lr", c.detector.lr}}},
      {"split",
       {{"train_models", c.split.train_models},
        {"test_models", c.split.test_models},
        {"test_per_model", c.split.test_per_model},
        {"train_per_model", c.split.train_per_model},
        {"test_real", c.split.test_real},
        {"train_real", c.split.train_real}}},
      {"robustness",
       {{"blur_levels", c.robustness.blur_levels},
        {"jpeg_levels", c.robustness.jpeg_levels},
        {"max_per_subset", c.robustness.max_per_subset}}},
  };
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("image_size", c.image_size);
  root.get("out", c.out);

  if (const auto* jp = root.child("paths")) {
    Section s(*jp, "paths");
    s.get("data", c.paths.data);
    s.get("checkpoints", c.paths.checkpoints);
    s.get("cache", c.paths.cache);
    s.get("reports", c.paths.reports);
    s.finish();
  }
  if (const auto* jt = root.child("toy")) {
    Section s(*jt, "toy");
    s.get("real_count", c.toy.real_count);
    s.get("gan_count", c.toy.gan_count);
    s.get("dm_count", c.toy.dm_count);
    s.get("real_source", c.toy.real_source);
    s.finish();
  }
  if (const auto* js = root.child("schedule")) {
    Section s(*js, "schedule");
    s.get("timesteps", c.schedule.timesteps);
    s.get("beta_start", c.schedule.beta_start);
    s.get("beta_end", c.schedule.beta_end);
    s.get("sample_steps", c.schedule.sample_steps);
    s.finish();
  }
  if (const auto* jd = root.child("dm")) {
    Section s(*jd, "dm");
    s.get("base_channels", c.dm.base_channels);
    s.get("temb_dim", c.dm.temb_dim);
    s.get("temb_hidden", c.dm.temb_hidden);
    s.get("steps", c.dm.steps);
    s.get("batch_size", c.dm.batch_size);
    s.get("lr", c.dm.lr);
    s.finish();
  }
  if (const auto* jg = root.child("gan")) {
    Section s(*jg, "gan");
    s.get("z_dim", c.gan.z_dim);
    s.get("w_dim", c.gan.w_dim);
    s.get("wstar_dim", c.gan.wstar_dim);
    s.get("num_layers", c.gan.num_layers);
    s.get("channels", c.gan.channels);
    s.get("steps", c.gan.steps);
    s.get("batch_size", c.gan.batch_size);
    s.get("lr", c.gan.lr);
    s.get("encoder_steps", c.gan.encoder_steps);
    s.get("encoder_lr", c.gan.encoder_lr);
    s.finish();
  }
  if (const auto* jr = root.child("recon")) {
    Section s(*jr, "recon");
    s.get("refine_steps", c.recon.refine_steps);
    s.get("refine_lr", c.recon.refine_lr);
    s.get("batch", c.recon.batch);
    s.finish();
  }
  if (const auto* jd = root.child("detector")) {
    Section s(*jd, "detector");
    s.get("mode", c.detector.mode);
    s.get("backbone", c.detector.backbone);
    s.get("epochs", c.detector.epochs);
    s.get("batch_size", c.detector.batch_size);
    s.get("lr", c.detector.lr);
    s.finish();
  }
  if (const auto* jp = root.child("split")) {
    Section s(*jp, "split");
    s.get("train_models", c.split.train_models);
    s.get("test_models", c.split.test_models);
    s.get("test_per_model", c.split.test_per_model);
    s.get("train_per_model", c.split.train_per_model);
    s.get("test_real", c.split.test_real);
    s.get("train_real", c.split.train_real);
    s.finish();
  }
  if (const auto* jr = root.child("robustness")) {
    Section s(*jr, "robustness");
    s.get("blur_levels", c.robustness.blur_levels);
    s.get("jpeg_levels", c.robustness.jpeg_levels);
    s.get("max_per_subset", c.robustness.max_per_subset);
    s.finish();
  }
  root.finish();
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid json: " + path.string() + " (" + e.what() + ")");
  }
  return config_from_json(j);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string key_path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare words stay strings

  try {
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = key_path.find('.', start);
      const std::string part = key_path.substr(start, dot - start);
      if (part.empty()) throw ConfigError("override has an empty key segment: " + assignment);
      if (dot == std::string::npos) {
        (*node)[part] = std::move(value);
        return;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("override path crosses a non-section key: " + assignment);
  }
}

void write_effective_config(const RunConfig& c, const fs::path& path) {
  atomic_write_text(path.string(), config_to_json(c).dump(2) + "\n");
}

std::string config_digest(const RunConfig& c) {
  return to_hex(fnv1a64(config_to_json(c).dump()));
}

}  // namespace recondet
