#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recondet/datasets.hpp"
#include "recondet/denoiser.hpp"
#include "recondet/detector.hpp"
#include "recondet/gan.hpp"
#include "recondet/image.hpp"
#include "recondet/schedule.hpp"

namespace recondet {

// One structured config drives every command. Sections mirror the modules
// they parameterize; a file only lists the keys it wants to change. Unknown
// keys are rejected rather than ignored, so a typo cannot silently leave a
// default in place.
struct RunConfig {
  std::uint64_t seed = 1;
  int image_size = 32;
  std::filesystem::path out = "out";

  struct Paths {
    std::string data;  // empty entries derive from `out`
    std::string checkpoints;
    std::string cache;
    std::string reports;
  } paths;

  struct Toy {
    int real_count = 2500;
    int gan_count = 1200;
    int dm_count = 1200;
    std::string real_source;  // optional folder of user-supplied real images
  } toy;

  struct Schedule {
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int sample_steps = 20;
  } schedule;

  struct Dm {
    int base_channels = 24;
    int temb_dim = 64;
    int temb_hidden = 128;
    int steps = 1500;
    int batch_size = 32;
    double lr = 2e-4;
  } dm;

  struct Gan {
    int z_dim = 64;
    int w_dim = 64;
    int wstar_dim = 64;
    int num_layers = 4;
    std::vector<int> channels = {96, 64, 48, 32};
    int steps = 3000;
    int batch_size = 16;
    double lr = 2e-4;
    int encoder_steps = 1200;
    double encoder_lr = 1e-3;
  } gan;

  struct Recon {
    int refine_steps = 20;
    double refine_lr = 0.05;
    int batch = 16;
  } recon;

  struct Det {
    std::string mode = "cascade_multi";
    std::string backbone = "small";
    int epochs = 10;
    int batch_size = 32;
    double lr = 1e-3;
  } detector;

  struct SplitSection {
    std::vector<std::string> train_models = {"toygan", "toydm"};
    std::vector<std::string> test_models = {"toygan", "toydm"};
    int test_per_model = 500;
    int train_per_model = -1;  // -1 takes the remainder
    int test_real = 500;
    int train_real = -1;
  } split;

  struct Robustness {
    std::vector<int> blur_levels = {0, 1, 2, 3};
    std::vector<int> jpeg_levels = {1, 2, 3};
    int max_per_subset = 60;  // 0 keeps every test sample
  } robustness;

  // Artifact locations, honoring per-path overrides.
  std::filesystem::path data_dir() const;
  std::filesystem::path checkpoint_dir() const;
  std::filesystem::path cache_dir() const;
  std::filesystem::path report_dir() const;

  // Views onto the owning modules' config structs.
  DiffusionSchedule make_schedule() const;
  DenoiserConfig denoiser_config() const;
  DenoiserTrainConfig denoiser_train() const;
  GanConfig gan_config() const;
  GanTrainConfig gan_train() const;
  EncoderTrainConfig encoder_train() const;
  DetectorConfig detector_config() const;
  DetectorTrainConfig detector_train() const;
  SplitSpec split_spec() const;
  ReconParams recon_params() const;
  std::vector<PerturbSpec> perturb_grid() const;

  void validate() const;
};

nlohmann::json config_to_json(const RunConfig& c);

// Parses a possibly partial config on top of the defaults. Unknown keys or
// wrongly typed values -> ConfigError naming the dotted path.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::filesystem::path& path);

// Applies one "section.key=value" assignment to a config json. The value is
// parsed as json when possible, with bare words falling back to strings.
void apply_override(nlohmann::json& j, const std::string& assignment);

// The merged config a run actually used, persisted next to its outputs.
void write_effective_config(const RunConfig& c, const std::filesystem::path& path);
std::string config_digest(const RunConfig& c);

}  // namespace recondet
