#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "recondet/checkpoint.hpp"
#include "recondet/common.hpp"
#include "recondet/config.hpp"
#include "recondet/datasets.hpp"
#include "recondet/denoiser.hpp"
#include "recondet/detector.hpp"
#include "recondet/gan.hpp"
#include "recondet/metrics.hpp"
#include "recondet/plot.hpp"

namespace fs = std::filesystem;
using namespace recondet;

namespace {

fs::path manifest_path(const RunConfig& c) { return c.data_dir() / "manifest.tsv"; }

fs::path ckpt_path(const RunConfig& c, const std::string& name) {
  return c.checkpoint_dir() / (name + ".ckpt");
}

fs::path detector_ckpt_path(const RunConfig& c, InputMode mode) {
  return c.checkpoint_dir() / ("detector_" + std::string(input_mode_name(mode)) + ".ckpt");
}

Manifest load_manifest_checked(const RunConfig& c) {
  const fs::path p = manifest_path(c);
  if (!fs::exists(p))
    throw DependencyError("dataset manifest not found: " + p.string() + " (run toygen first)");
  return read_manifest(p);
}

void require_checkpoint(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p))
    throw DependencyError("checkpoint not found: " + p.string() + " (" + hint + ")");
}

Detector load_detector_checked(const RunConfig& c, InputMode mode) {
  const fs::path p = detector_ckpt_path(c, mode);
  require_checkpoint(p, std::string("run train --target detector with detector.mode=") +
                            input_mode_name(mode));
  Detector det = Detector::load(p.string());
  if (det.config().mode != mode)
    throw DependencyError("checkpoint " + p.string() + " was trained for mode " +
                          input_mode_name(det.config().mode));
  if (det.config().image_size != c.image_size)
    throw DependencyError("checkpoint " + p.string() + " expects image_size " +
                          std::to_string(det.config().image_size));
  return det;
}

ReconCache open_cache(const RunConfig& c) {
  require_checkpoint(ckpt_path(c, "gan"), "run train --target gan");
  require_checkpoint(ckpt_path(c, "dm"), "run train --target dm");
  return ReconCache(c.cache_dir(), checkpoint_id(ckpt_path(c, "gan").string()),
                    checkpoint_id(ckpt_path(c, "dm").string()));
}

void require_cache_coverage(const ReconCache& cache, const std::vector<ManifestRecord>& records,
                            const fs::path& cache_dir) {
  std::size_t missing = 0;
  std::string first;
  for (const auto& rec : records) {
    if (!cache.has(rec.relpath)) {
      if (missing == 0) first = rec.relpath;
      ++missing;
    }
  }
  if (missing > 0)
    throw DependencyError("reconstruction cache at " + cache_dir.string() + " is missing " +
                          std::to_string(missing) + " entries, first " + first +
                          " (run reconstruct)");
}

std::vector<Image> real_train_images(const Manifest& m, int size) {
  std::vector<Image> out;
  for (const auto& rec : m.records)
    if (rec.family == Family::real && rec.split == Split::train)
      out.push_back(load_image((m.root / fs::path(rec.relpath)).string(), size));
  return out;
}

void write_json_artifact(const nlohmann::json& j, const fs::path& path) {
  atomic_write_text(path.string(), j.dump(2) + "\n");
}

void write_train_log(const fs::path& path, const std::string& target, const RunConfig& c,
                     nlohmann::json body) {
  body["target"] = target;
  body["seed"] = c.seed;
  body["config_digest"] = config_digest(c);
  write_json_artifact(body, path);
}

void write_report_artifacts(const EvalReport& rep, const RunConfig& c, const fs::path& json_path,
                            const fs::path* text_path) {
  nlohmann::json j = report_to_json(rep);
  j["config_digest"] = config_digest(c);
  write_json_artifact(j, json_path);
  if (text_path) {
    atomic_write_text(text_path->string(),
                      render_report(rep) + "\nconfig " + config_digest(c) + "\n");
  }
}

// ------------------------------------------------------------------- toygen

int cmd_toygen(const RunConfig& c) {
  ToyDatasetConfig base;
  base.root = c.data_dir();
  base.image_size = c.image_size;
  base.seed = c.seed;
  base.want_real = false;

  if (c.toy.real_count > 0) {
    ToyDatasetConfig stage = base;
    stage.want_real = true;
    stage.per_class = c.toy.real_count;
    stage.real_source = c.toy.real_source;
    generate_toy_dataset(stage);
    std::printf("real: %d images\n", c.toy.real_count);
  }
  if (c.toy.gan_count > 0) {
    ToyDatasetConfig stage = base;
    stage.want_gan = true;
    stage.per_class = c.toy.gan_count;
    stage.gan_checkpoint = ckpt_path(c, "gan");
    generate_toy_dataset(stage);
    std::printf("toygan: %d images\n", c.toy.gan_count);
  }
  if (c.toy.dm_count > 0) {
    ToyDatasetConfig stage = base;
    stage.want_dm = true;
    stage.per_class = c.toy.dm_count;
    stage.dm_checkpoint = ckpt_path(c, "dm");
    stage.sample_steps = c.schedule.sample_steps;
    generate_toy_dataset(stage);
    std::printf("toydm: %d images\n", c.toy.dm_count);
  }

  std::vector<std::string> skipped;
  Manifest scanned = scan_dataset(c.data_dir(), &skipped);
  for (const auto& note : skipped) std::printf("skipped %s\n", note.c_str());

  // Classes this run does not generate leave the split spec, so a real-only
  // stage still yields a usable manifest.
  SplitSpec spec = c.split_spec();
  auto drop = [&](const std::string& model) {
    std::erase(spec.train_models, model);
    std::erase(spec.test_models, model);
  };
  if (c.toy.gan_count <= 0) drop("toygan");
  if (c.toy.dm_count <= 0) drop("toydm");

  Manifest split = make_splits(scanned, spec, c.seed);
  write_manifest(split, manifest_path(c));
  write_effective_config(c, c.data_dir() / "config.json");

  int train_n = 0, test_n = 0;
  for (const auto& rec : split.records) (rec.split == Split::train ? train_n : test_n)++;
  std::printf("manifest %s: %d train, %d test\n", manifest_path(c).string().c_str(), train_n,
              test_n);
  return 0;
}

// -------------------------------------------------------------------- train

int cmd_train(const RunConfig& c, const std::string& target) {
  fs::create_directories(c.checkpoint_dir());

  if (target == "dm") {
    Manifest m = load_manifest_checked(c);
    const auto images = real_train_images(m, c.image_size);
    if (images.empty()) throw DataError("manifest has no real training images");
    const DiffusionSchedule sched = c.make_schedule();
    Denoiser den(c.denoiser_config(), Rng::derive(c.seed, "init:dm"));
    const TrainLog log =
        train_denoiser(den, images, sched, c.denoiser_train(), Rng::derive(c.seed, "train:dm"));
    den.save(ckpt_path(c, "dm").string(), sched, c.seed);
    write_digest_sidecar(ckpt_path(c, "dm").string());
    write_train_log(c.checkpoint_dir() / "dm_train_log.json", target, c,
                    {{"losses", log.losses}, {"final_loss", log.final_loss}});
    std::printf("dm checkpoint %s, final loss %.6f\n", ckpt_path(c, "dm").string().c_str(),
                log.final_loss);
  } else if (target == "gan") {
    Manifest m = load_manifest_checked(c);
    const auto images = real_train_images(m, c.image_size);
    if (images.empty()) throw DataError("manifest has no real training images");
    GanModel model(c.gan_config(), Rng::derive(c.seed, "init:gan"));
    const GanTrainLog log =
        train_gan(model, images, c.gan_train(), Rng::derive(c.seed, "train:gan"));
    model.save(ckpt_path(c, "gan").string(), c.seed);
    write_digest_sidecar(ckpt_path(c, "gan").string());
    write_train_log(c.checkpoint_dir() / "gan_train_log.json", target, c,
                    {{"d_losses", log.d_losses}, {"g_losses", log.g_losses}});
    std::printf("gan checkpoint %s\n", ckpt_path(c, "gan").string().c_str());
  } else if (target == "encoder") {
    require_checkpoint(ckpt_path(c, "gan"), "run train --target gan");
    GanModel model = GanModel::load(ckpt_path(c, "gan").string());
    Encoder enc(model.cfg, Rng::derive(c.seed, "init:encoder"));
    const TrainLog log =
        train_encoder(model, enc, c.encoder_train(), Rng::derive(c.seed, "train:encoder"));
    enc.save(ckpt_path(c, "encoder").string(), model.cfg, c.seed);
    write_digest_sidecar(ckpt_path(c, "encoder").string());
    write_train_log(c.checkpoint_dir() / "encoder_train_log.json", target, c,
                    {{"losses", log.losses}, {"final_loss", log.final_loss}});
    std::printf("encoder checkpoint %s, final loss %.6f\n",
                ckpt_path(c, "encoder").string().c_str(), log.final_loss);
  } else if (target == "detector") {
    Manifest m = load_manifest_checked(c);
    const auto records = select_split(m, Split::train);
    if (records.empty()) throw DataError("manifest has no training split");
    ReconCache cache = open_cache(c);
    require_cache_coverage(cache, records, c.cache_dir());

    const DetectorConfig dc = c.detector_config();
    const bool need_rg = mode_uses_gan(dc.mode);
    const bool need_rd = mode_uses_dm(dc.mode);
    std::vector<Image> xs, rgs, rds;
    std::vector<int> labels;
    xs.reserve(records.size());
    labels.reserve(records.size());
    for (const auto& rec : records) {
      xs.push_back(load_image((m.root / fs::path(rec.relpath)).string(), c.image_size));
      if (need_rg) rgs.push_back(cache.load_rg(rec.relpath));
      if (need_rd) rds.push_back(cache.load_rd(rec.relpath));
      labels.push_back(static_cast<int>(rec.family));
    }
    const nn::Tensor x = build_input_batch(xs, rgs, rds, dc.mode);
    xs.clear();
    rgs.clear();
    rds.clear();

    Detector det(dc, Rng::derive(c.seed, "init:detector"));
    const DetectorTrainLog log =
        train_detector(det, x, labels, c.detector_train(), Rng::derive(c.seed, "train:detector"));
    const fs::path out = detector_ckpt_path(c, dc.mode);
    det.save(out.string(), c.seed);
    write_digest_sidecar(out.string());
    write_train_log(c.checkpoint_dir() /
                        ("detector_" + std::string(input_mode_name(dc.mode)) + "_train_log.json"),
                    target, c,
                    {{"losses", log.losses},
                     {"epoch_accuracy", log.epoch_accuracy},
                     {"final_loss", log.final_loss}});
    std::printf("detector checkpoint %s, final loss %.6f, last epoch accuracy %.4f\n",
                out.string().c_str(), log.final_loss,
                log.epoch_accuracy.empty() ? 0.0 : log.epoch_accuracy.back());
  } else {
    throw ConfigError("unknown train target: " + target);
  }

  write_effective_config(c, c.checkpoint_dir() / (target + ".config.json"));
  return 0;
}

// -------------------------------------------------------------- reconstruct

int cmd_reconstruct(const RunConfig& c, const std::string& input) {
  require_checkpoint(ckpt_path(c, "dm"), "run train --target dm");
  require_checkpoint(ckpt_path(c, "gan"), "run train --target gan");
  require_checkpoint(ckpt_path(c, "encoder"), "run train --target encoder");
  DiffusionSchedule sched;
  Denoiser den = Denoiser::load(ckpt_path(c, "dm").string(), &sched);
  GanModel gan = GanModel::load(ckpt_path(c, "gan").string());
  Encoder enc = Encoder::load(ckpt_path(c, "encoder").string());
  const ReconParams rp = c.recon_params();

  const bool single = !input.empty() && fs::path(input).extension() != ".tsv";
  if (single) {
    if (!fs::exists(input)) throw DependencyError("input image not found: " + input);
    const Image x = load_image(input, c.image_size);
    const Image rd = reconstruct_dm(den, sched, x, rp.ddim_steps);
    const Image rg = reconstruct_gan(gan.gen, enc, x, rp.refine_steps, rp.refine_lr);

    const fs::path dir = c.out / "recon";
    fs::create_directories(dir);
    const std::string stem = fs::path(input).stem().string();
    save_png(rg, (dir / (stem + "_rg.png")).string(), 16);
    save_png(rd, (dir / (stem + "_rd.png")).string(), 16);
    write_effective_config(c, dir / "config.json");
    std::printf("%s: mse_rg %.8f, mse_rd %.8f\n", input.c_str(), mse(x, rg), mse(x, rd));
    return 0;
  }

  const Manifest m = input.empty() ? load_manifest_checked(c) : read_manifest(input);
  ReconCache cache = open_cache(c);
  const ReconStats st = precompute_reconstructions(m, den, sched, gan.gen, enc, cache, rp);
  for (const auto& note : st.failures) std::printf("skipped %s\n", note.c_str());
  write_effective_config(c, c.cache_dir() / "config.json");
  std::printf("cache %s: %d computed, %d reused, %zu skipped\n", c.cache_dir().string().c_str(),
              st.computed, st.hits, st.failures.size());
  if (!m.records.empty() && st.computed + st.hits == 0)
    throw TrainingError("every input failed to reconstruct");
  return 0;
}

// --------------------------------------------------------------------- eval

Manifest capped_test_manifest(const Manifest& m, int cap) {
  Manifest out;
  out.root = m.root;
  std::map<std::string, int> taken;
  for (const auto& rec : m.records) {
    if (rec.split != Split::test) continue;
    if (cap > 0 && taken[rec.model] >= cap) continue;
    ++taken[rec.model];
    out.records.push_back(rec);
  }
  return out;
}

int cmd_eval(const RunConfig& c, const std::string& target) {
  fs::create_directories(c.report_dir());
  const InputMode mode = c.detector_config().mode;
  Manifest m = load_manifest_checked(c);

  if (target == "table") {
    Detector det = load_detector_checked(c, mode);
    ReconCache cache = open_cache(c);
    require_cache_coverage(cache, select_split(m, Split::test), c.cache_dir());
    const auto samples =
        predict_records(det, m, select_split(m, Split::test), cache, c.detector.batch_size);
    const EvalReport rep = assemble_report(samples, mode, "none");
    const std::string name = std::string("table_") + input_mode_name(mode);
    const fs::path txt = c.report_dir() / (name + ".txt");
    write_report_artifacts(rep, c, c.report_dir() / (name + ".json"), &txt);
    write_predictions_tsv(samples, c.report_dir() / (name + "_predictions.tsv"));
    std::fputs(render_report(rep).c_str(), stdout);
  } else if (target == "robustness") {
    Detector det = load_detector_checked(c, mode);
    require_checkpoint(ckpt_path(c, "encoder"), "run train --target encoder");
    DiffusionSchedule sched;
    Denoiser den = Denoiser::load(ckpt_path(c, "dm").string(), &sched);
    GanModel gan = GanModel::load(ckpt_path(c, "gan").string());
    Encoder enc = Encoder::load(ckpt_path(c, "encoder").string());

    const Manifest capped = capped_test_manifest(m, c.robustness.max_per_subset);
    const auto sweep = robustness_sweep(det, capped, den, sched, gan.gen, enc, c.perturb_grid(),
                                        c.recon_params());
    const std::string name = std::string("robustness_") + input_mode_name(mode);
    const fs::path dir = c.report_dir() / name;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      char prefix[8];
      std::snprintf(prefix, sizeof(prefix), "%02zu_", i);
      write_report_artifacts(sweep[i], c, dir / (prefix + sweep[i].perturbation + ".json"),
                             nullptr);
      std::printf("%-14s mean ACC %.4f, mean AP %.4f\n", sweep[i].perturbation.c_str(),
                  sweep[i].mean_acc, sweep[i].mean_ap);
    }
    plot_robustness(sweep, c.report_dir() / (name + ".png"));
  } else if (target == "embeddings") {
    Detector det = load_detector_checked(c, mode);
    ReconCache cache = open_cache(c);
    require_cache_coverage(cache, select_split(m, Split::test), c.cache_dir());
    const fs::path out =
        c.report_dir() / (std::string("embeddings_") + input_mode_name(mode) + ".tsv");
    export_embeddings(det, m, cache, out, c.detector.batch_size);
    std::printf("embeddings %s\n", out.string().c_str());
  } else if (target == "ablation") {
    ReconCache cache = open_cache(c);
    require_cache_coverage(cache, select_split(m, Split::test), c.cache_dir());
    const fs::path dir = c.report_dir() / "ablation";
    fs::create_directories(dir);
    std::string combined;
    std::string summary = "# recondet-ablation v1\n# columns\tmode\tmean_acc\tmean_ap\n";
    for (InputMode am : all_input_modes()) {
      Detector det = load_detector_checked(c, am);
      const EvalReport rep = per_subset_report(det, m, cache, c.detector.batch_size);
      write_report_artifacts(rep, c, dir / (std::string(input_mode_name(am)) + ".json"), nullptr);
      combined += render_report(rep) + "\n";
      char row[128];
      std::snprintf(row, sizeof(row), "%s\t%.17g\t%.17g\n", input_mode_name(am), rep.mean_acc,
                    rep.mean_ap);
      summary += row;
    }
    combined += "config " + config_digest(c) + "\n";
    atomic_write_text((c.report_dir() / "ablation.txt").string(), combined);
    atomic_write_text((c.report_dir() / "ablation_summary.tsv").string(), summary);
    std::fputs(summary.c_str(), stdout);
  } else {
    throw ConfigError("unknown eval target: " + target);
  }

  write_effective_config(c, c.report_dir() / (target + ".config.json"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-reconstruction synthetic face detection pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  auto* opt_config = app.add_option("--config", config_path, "json config file");
  auto* opt_seed = app.add_option("--seed", seed, "override the config seed");
  auto* opt_out = app.add_option("--out", out_dir, "artifact root directory");
  app.add_option("--set", sets, "override one config key, section.key=value");

  auto* sc_toygen = app.add_subcommand("toygen", "generate the toy dataset and split manifest");
  auto* sc_train = app.add_subcommand("train", "train one pipeline stage");
  std::string train_target;
  sc_train->add_option("--target", train_target, "gan | dm | encoder | detector")
      ->required()
      ->check(CLI::IsMember({"gan", "dm", "encoder", "detector"}));
  auto* sc_recon = app.add_subcommand("reconstruct", "invert images through both generators");
  std::string recon_input;
  sc_recon->add_option("--input", recon_input,
                       "an image file or a manifest .tsv (default: the dataset manifest)");
  auto* sc_eval = app.add_subcommand("eval", "evaluate the detector and export reports");
  std::string eval_target = "table";
  sc_eval->add_option("--target", eval_target, "table | robustness | embeddings | ablation")
      ->check(CLI::IsMember({"table", "robustness", "embeddings", "ablation"}));
  for (auto* sc : {sc_toygen, sc_train, sc_recon, sc_eval}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      if (!fs::exists(config_path))
        throw ConfigError("config file not found: " + config_path);
      std::ifstream in(config_path, std::ios::binary);
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid json: " + config_path + " (" + e.what() + ")");
      }
    }
    for (const auto& assignment : sets) apply_override(j, assignment);
    RunConfig c = config_from_json(j);
    if (opt_seed->count() > 0) c.seed = seed;
    if (opt_out->count() > 0) c.out = out_dir;
    (void)opt_config;
    c.validate();

    if (sc_toygen->parsed()) return cmd_toygen(c);
    if (sc_train->parsed()) return cmd_train(c, train_target);
    if (sc_recon->parsed()) return cmd_reconstruct(c, recon_input);
    if (sc_eval->parsed()) return cmd_eval(c, eval_target);
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
