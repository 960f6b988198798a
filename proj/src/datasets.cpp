#include "recondet/datasets.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "recondet/rng.hpp"

namespace recondet {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, Family>& family_table() {
  static const std::map<std::string, Family> table = {
      {"real", Family::real},          {"stylegan1", Family::gan}, {"stylegan2", Family::gan},
      {"progan", Family::gan},         {"vqgan", Family::gan},     {"toygan", Family::gan},
      {"adm", Family::dm},             {"iddpm", Family::dm},      {"ldm", Family::dm},
      {"sde", Family::dm},             {"toydm", Family::dm},
  };
  return table;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(context + ": bad number '" + s + "'");
  }
}

}  // namespace

Family family_label(const std::string& model_name) {
  const auto& table = family_table();
  auto it = table.find(model_name);
  if (it == table.end()) {
    std::string all;
    for (const auto& n : known_models()) {
      if (!all.empty()) all += ", ";
      all += n;
    }
    throw DataError("unknown source model '" + model_name + "'; registered models: " + all);
  }
  return it->second;
}

const std::vector<std::string>& known_models() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fam] : family_table()) out.push_back(name);
    return out;
  }();
  return names;
}

Family parse_family(const std::string& name) {
  if (name == "real") return Family::real;
  if (name == "gan") return Family::gan;
  if (name == "dm") return Family::dm;
  throw ConfigError("unknown family '" + name + "' (expected real, gan, or dm)");
}

const char* split_name(Split s) {
  return s == Split::train ? "train" : "test";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

Manifest scan_dataset(const fs::path& root, std::vector<std::string>* skipped) {
  if (!fs::is_directory(root))
    throw DataError("dataset root is not a directory: " + root.string());
  if (!fs::is_directory(root / "real"))
    throw DataError("dataset root has no real/ directory: " + root.string());

  Manifest m;
  m.root = root;
  auto note = [&](const std::string& msg) {
    if (skipped) skipped->push_back(msg);
  };

  auto scan_leaf = [&](const fs::path& dir, const std::string& model, Family fam) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (!has_image_extension(f)) continue;
      std::string rel = fs::relative(f, root).generic_string();
      try {
        load_image_native(f.string());
      } catch (const std::exception&) {
        note(rel + ": not a decodable image");
        continue;
      }
      m.records.push_back({rel, model, fam, Split::train});
    }
  };

  scan_leaf(root / "real", "real", Family::real);

  for (const char* fam_dir : {"gan", "dm"}) {
    fs::path dir = root / fam_dir;
    if (!fs::is_directory(dir)) continue;
    const Family expected = parse_family(fam_dir);
    std::vector<fs::path> model_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) {
        model_dirs.push_back(entry.path());
      } else {
        note(fs::relative(entry.path(), root).generic_string() +
             ": stray file outside a model directory");
      }
    }
    std::sort(model_dirs.begin(), model_dirs.end());
    for (const auto& md : model_dirs) {
      const std::string model = md.filename().string();
      const Family fam = family_label(model);
      if (fam != expected)
        throw DataError("model '" + model + "' is registered as " + family_name(fam) +
                        " but sits under " + fam_dir + "/");
      scan_leaf(md, model, fam);
    }
  }

  std::sort(m.records.begin(), m.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.relpath < b.relpath; });
  return m;
}

Manifest make_splits(const Manifest& scanned, const SplitSpec& spec, std::uint64_t seed) {
  if (spec.test_per_model < 0 || spec.test_real < 0)
    throw ConfigError("test counts must be non-negative");
  if (spec.train_per_model < -1 || spec.train_real < -1)
    throw ConfigError("train counts must be -1 (rest) or non-negative");
  for (const auto& list : {spec.train_models, spec.test_models})
    for (const auto& name : list)
      if (name == "real")
        throw ConfigError("real images are split automatically; list only synthetic models");

  std::map<std::string, std::vector<const ManifestRecord*>> groups;
  for (const auto& r : scanned.records) groups[r.model].push_back(&r);

  Manifest out;
  out.root = scanned.root;

  auto contains = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };

  auto draw = [&](const std::string& model, int want_test, int want_train) {
    auto it = groups.find(model);
    const int avail = it == groups.end() ? 0 : static_cast<int>(it->second.size());
    if (avail == 0) throw DataError("no images for model '" + model + "'");
    if (want_test > avail)
      throw DataError("model '" + model + "' has " + std::to_string(avail) +
                      " images but the test split needs " + std::to_string(want_test));
    const int take_train = want_train < 0 ? avail - want_test : want_train;
    if (want_test + take_train > avail)
      throw DataError("model '" + model + "' has " + std::to_string(avail) +
                      " images but the splits need " + std::to_string(want_test + take_train));
    std::vector<int> idx(it->second.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(Rng::derive(seed, "split:" + model));
    rng.shuffle(idx);
    for (int i = 0; i < want_test + take_train; ++i) {
      ManifestRecord rec = *it->second[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
      rec.split = i < want_test ? Split::test : Split::train;
      out.records.push_back(std::move(rec));
    }
  };

  draw("real", spec.test_real, spec.train_real);

  std::set<std::string> synth(spec.train_models.begin(), spec.train_models.end());
  synth.insert(spec.test_models.begin(), spec.test_models.end());
  for (const auto& model : synth) {
    const int want_test = contains(spec.test_models, model) ? spec.test_per_model : 0;
    const int want_train = contains(spec.train_models, model) ? spec.train_per_model : 0;
    draw(model, want_test, want_train);
  }

  std::sort(out.records.begin(), out.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.relpath < b.relpath; });
  for (std::size_t i = 1; i < out.records.size(); ++i)
    if (out.records[i].relpath == out.records[i - 1].relpath)
      throw DataError("split produced a duplicate path: " + out.records[i].relpath);
  return out;
}

std::vector<ManifestRecord> select_split(const Manifest& m, Split split) {
  std::vector<ManifestRecord> out;
  for (const auto& r : m.records)
    if (r.split == split) out.push_back(r);
  return out;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  std::ostringstream os;
  os << "# recondet-manifest v1\n";
  os << "# root\t" << m.root.generic_string() << "\n";
  os << "# columns\trelpath\tmodel\tfamily\tsplit\n";
  for (const auto& r : m.records) {
    if (r.relpath.find_first_of("\t\n") != std::string::npos)
      throw DataError("manifest path contains a tab or newline: " + r.relpath);
    if (family_label(r.model) != r.family)
      throw DataError("record for '" + r.relpath + "' labels model '" + r.model + "' as " +
                      family_name(r.family));
    os << r.relpath << '\t' << r.model << '\t' << family_name(r.family) << '\t'
       << split_name(r.split) << '\n';
  }
  atomic_write_text(path.string(), os.str());
}

Manifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("manifest not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line != "# recondet-manifest v1")
    throw ConfigError("not a recondet manifest: " + path.string());

  Manifest m;
  bool have_root = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.rfind("# root\t", 0) == 0) {
      m.root = fs::path(line.substr(7));
      have_root = true;
      continue;
    }
    if (line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw ConfigError(where + ": expected 4 tab-separated fields, got " +
                        std::to_string(fields.size()));
    ManifestRecord r;
    r.relpath = fields[0];
    r.model = fields[1];
    r.family = parse_family(fields[2]);
    r.split = parse_split(fields[3]);
    if (family_label(r.model) != r.family)
      throw ConfigError(where + ": model '" + r.model + "' belongs to family " +
                        family_name(family_label(r.model)) + ", row says " + fields[2]);
    m.records.push_back(std::move(r));
  }
  if (!have_root) throw ConfigError("manifest has no '# root' line: " + path.string());
  return m;
}

namespace {

struct SoftEllipse {
  float cx, cy, rx, ry;
  float color[3];

  float coverage(float u, float v) const {
    const float du = (u - cx) / rx;
    const float dv = (v - cy) / ry;
    const float d = du * du + dv * dv;
    return std::clamp((1.f - d) * 6.f, 0.f, 1.f);
  }
};

}  // namespace

Image toy_real_image(int image_size, std::uint64_t seed) {
  if (image_size < 8) throw ConfigError("toy real images need size >= 8");
  Rng rng(seed);
  Image img(image_size, image_size);

  float top[3], bot[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = static_cast<float>(rng.uniform(-0.9, 0.0));
    bot[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
  }

  SoftEllipse head;
  head.cx = static_cast<float>(rng.uniform(-0.08, 0.08));
  head.cy = static_cast<float>(rng.uniform(-0.08, 0.08));
  head.rx = static_cast<float>(rng.uniform(0.55, 0.72));
  head.ry = static_cast<float>(rng.uniform(0.68, 0.85));
  head.color[0] = static_cast<float>(rng.uniform(0.25, 0.65));
  head.color[1] = static_cast<float>(rng.uniform(-0.05, 0.30));
  head.color[2] = static_cast<float>(rng.uniform(-0.40, 0.00));

  // Eyes share every parameter except the sign of the horizontal offset, so
  // the pattern keeps the left-right symmetry real faces have.
  const float eye_dx = static_cast<float>(rng.uniform(0.25, 0.45)) * head.rx;
  const float eye_y = head.cy - static_cast<float>(rng.uniform(0.18, 0.32)) * head.ry;
  const float eye_rad = static_cast<float>(rng.uniform(0.06, 0.11));
  const float eye_shade = static_cast<float>(rng.uniform(-0.95, -0.55));
  SoftEllipse eye_left{head.cx - eye_dx, eye_y, eye_rad, eye_rad * 1.2f,
                       {eye_shade, eye_shade, eye_shade}};
  SoftEllipse eye_right{head.cx + eye_dx, eye_y, eye_rad, eye_rad * 1.2f,
                        {eye_shade, eye_shade, eye_shade}};

  SoftEllipse mouth;
  mouth.cx = head.cx + static_cast<float>(rng.uniform(-0.04, 0.04));
  mouth.cy = head.cy + static_cast<float>(rng.uniform(0.32, 0.48)) * head.ry;
  mouth.rx = static_cast<float>(rng.uniform(0.18, 0.30));
  mouth.ry = static_cast<float>(rng.uniform(0.05, 0.10));
  mouth.color[0] = static_cast<float>(rng.uniform(-0.10, 0.20));
  mouth.color[1] = static_cast<float>(rng.uniform(-0.80, -0.50));
  mouth.color[2] = static_cast<float>(rng.uniform(-0.80, -0.50));

  const SoftEllipse* shapes[] = {&head, &eye_left, &eye_right, &mouth};
  for (int y = 0; y < image_size; ++y) {
    const float v = (y + 0.5f) / image_size * 2.f - 1.f;
    const float t = (y + 0.5f) / image_size;
    for (int x = 0; x < image_size; ++x) {
      const float u = (x + 0.5f) / image_size * 2.f - 1.f;
      for (int c = 0; c < 3; ++c) {
        float val = top[c] + (bot[c] - top[c]) * t;
        for (const auto* s : shapes) {
          const float cov = s->coverage(u, v);
          val += (s->color[c] - val) * cov;
        }
        img.at(c, y, x) = val;
      }
    }
  }

  for (auto& v : img.data)
    v = std::clamp(v + 0.1f * static_cast<float>(rng.normal()), -1.f, 1.f);
  return img;
}

namespace {

std::string leaf_file_name(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.png", prefix, index);
  return buf;
}

void save_class_images(const fs::path& dir, const char* prefix, const std::vector<Image>& images) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i)
    save_png(images[i], (dir / leaf_file_name(prefix, static_cast<int>(i))).string(), 8);
}

}  // namespace

void generate_toy_dataset(const ToyDatasetConfig& cfg) {
  if (cfg.per_class <= 0) throw ConfigError("toy dataset count must be positive");
  if (cfg.image_size < 8) throw ConfigError("toy dataset image size must be >= 8");
  if (!cfg.want_real && !cfg.want_gan && !cfg.want_dm)
    throw ConfigError("toy dataset generation needs at least one class");
  fs::create_directories(cfg.root);

  if (cfg.want_real) {
    const fs::path dir = cfg.root / "real";
    fs::create_directories(dir);
    if (!cfg.real_source.empty()) {
      if (!fs::is_directory(cfg.real_source))
        throw DependencyError("real source folder not found: " + cfg.real_source.string());
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(cfg.real_source))
        if (entry.is_regular_file() && has_image_extension(entry.path()))
          files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      if (static_cast<int>(files.size()) < cfg.per_class)
        throw DataError("real source folder holds " + std::to_string(files.size()) +
                        " images, need " + std::to_string(cfg.per_class));
      for (int i = 0; i < cfg.per_class; ++i) {
        Image img = load_image(files[static_cast<std::size_t>(i)].string(), cfg.image_size);
        save_png(img, (dir / leaf_file_name("real", i)).string(), 8);
      }
    } else {
      for (int i = 0; i < cfg.per_class; ++i) {
        Image img =
            toy_real_image(cfg.image_size, Rng::derive(cfg.seed, "toy-real:" + std::to_string(i)));
        save_png(img, (dir / leaf_file_name("real", i)).string(), 8);
      }
    }
  }

  if (cfg.want_gan) {
    if (!fs::exists(cfg.gan_checkpoint))
      throw DependencyError("gan checkpoint not found: " + cfg.gan_checkpoint.string() +
                            " (train the toy gan first)");
    GanModel model = GanModel::load(cfg.gan_checkpoint.string());
    auto images = sample_gan(model, cfg.per_class, Rng::derive(cfg.seed, "toygen-gan"));
    save_class_images(cfg.root / "gan" / "toygan", "gan", images);
  }

  if (cfg.want_dm) {
    if (!fs::exists(cfg.dm_checkpoint))
      throw DependencyError("dm checkpoint not found: " + cfg.dm_checkpoint.string() +
                            " (train the toy denoiser first)");
    DiffusionSchedule sched;
    Denoiser den = Denoiser::load(cfg.dm_checkpoint.string(), &sched);
    auto images =
        sample_dm(den, sched, cfg.per_class, cfg.sample_steps, Rng::derive(cfg.seed, "toygen-dm"));
    save_class_images(cfg.root / "dm" / "toydm", "dm", images);
  }
}

namespace {

constexpr const char* kCacheHeader = "# recondet-recon-cache v1";

std::string cache_png_rel(const std::string& relpath) {
  if (relpath.size() >= 4 && relpath.compare(relpath.size() - 4, 4, ".png") == 0) return relpath;
  return relpath + ".png";
}

}  // namespace

ReconCache::ReconCache(fs::path dir, std::string gan_id, std::string dm_id)
    : dir_(std::move(dir)), gan_id_(std::move(gan_id)), dm_id_(std::move(dm_id)) {
  fs::create_directories(dir_);
  const fs::path index = dir_ / "index.tsv";
  if (!fs::exists(index)) return;

  std::ifstream in(index, std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line != kCacheHeader)
    throw ConfigError("not a recon cache index: " + index.string());
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 5)
      throw ConfigError(index.string() + ":" + std::to_string(lineno) +
                        ": expected 5 tab-separated fields");
    if (fields[1] != gan_id_ || fields[2] != dm_id_) continue;  // stale checkpoint ids
    if (!fs::exists(rg_path(fields[0])) || !fs::exists(rd_path(fields[0]))) continue;
    const std::string where = index.string() + ":" + std::to_string(lineno);
    rows_[fields[0]] = {parse_double(fields[3], where), parse_double(fields[4], where)};
  }
}

bool ReconCache::has(const std::string& relpath) const {
  return rows_.count(relpath) != 0;
}

fs::path ReconCache::rg_path(const std::string& relpath) const {
  return dir_ / "rg" / fs::path(cache_png_rel(relpath));
}

fs::path ReconCache::rd_path(const std::string& relpath) const {
  return dir_ / "rd" / fs::path(cache_png_rel(relpath));
}

Image ReconCache::load_rg(const std::string& relpath) const {
  if (!has(relpath))
    throw DependencyError("reconstruction cache has no entry for '" + relpath + "'");
  return load_image_native(rg_path(relpath).string());
}

Image ReconCache::load_rd(const std::string& relpath) const {
  if (!has(relpath))
    throw DependencyError("reconstruction cache has no entry for '" + relpath + "'");
  return load_image_native(rd_path(relpath).string());
}

void ReconCache::put(const std::string& relpath, const Image& original, const Image& rg,
                     const Image& rd) {
  if (relpath.find_first_of("\t\n") != std::string::npos)
    throw DataError("cache path contains a tab or newline: " + relpath);
  save_png(rg, rg_path(relpath).string(), 16);
  save_png(rd, rd_path(relpath).string(), 16);
  rows_[relpath] = {mse(original, rg), mse(original, rd)};
}

void ReconCache::flush() const {
  std::ostringstream os;
  os << kCacheHeader << "\n";
  os << "# columns\trelpath\tgan_checkpoint\tdm_checkpoint\tmse_rg\tmse_rd\n";
  for (const auto& [relpath, entry] : rows_)
    os << relpath << '\t' << gan_id_ << '\t' << dm_id_ << '\t' << format_double(entry.mse_rg)
       << '\t' << format_double(entry.mse_rd) << '\n';
  atomic_write_text((dir_ / "index.tsv").string(), os.str());
}

ReconStats precompute_reconstructions(const Manifest& m, Denoiser& den,
                                      const DiffusionSchedule& sched, Generator& gen, Encoder& enc,
                                      ReconCache& cache, const ReconParams& rp) {
  if (rp.batch < 1) throw ConfigError("recon batch must be >= 1");
  if (rp.ddim_steps < 1) throw ConfigError("recon needs at least one ddim step");
  if (rp.refine_steps < 0) throw ConfigError("negative refine steps");
  if (rp.image_size < 8) throw ConfigError("recon image size must be >= 8");

  ReconStats st;
  std::vector<std::pair<std::string, Image>> pending;

  auto process_pending = [&]() {
    if (pending.empty()) return;
    std::vector<Image> xs;
    xs.reserve(pending.size());
    for (auto& p : pending) xs.push_back(p.second);
    // The diffusion round trip is batch-stable, so it runs chunked. GAN
    // inversions go one sample at a time: the generator's dense layers make
    // batched results depend on batch composition, and a cached image must
    // match a later single-image call bit for bit.
    auto rds = reconstruct_dm_batch(den, sched, xs, rp.ddim_steps);
    for (std::size_t i = 0; i < pending.size(); ++i) {
      Image rg = reconstruct_gan(gen, enc, xs[i], rp.refine_steps, rp.refine_lr);
      cache.put(pending[i].first, xs[i], rg, rds[i]);
      ++st.computed;
    }
    pending.clear();
  };

  for (const auto& r : m.records) {
    if (cache.has(r.relpath)) {
      ++st.hits;
      continue;
    }
    try {
      Image x = load_image((m.root / fs::path(r.relpath)).string(), rp.image_size);
      pending.emplace_back(r.relpath, std::move(x));
    } catch (const std::exception& e) {
      st.failures.push_back(r.relpath + ": " + e.what());
      continue;
    }
    if (static_cast<int>(pending.size()) == rp.batch) process_pending();
  }
  process_pending();
  cache.flush();
  return st;
}

}  // namespace recondet
