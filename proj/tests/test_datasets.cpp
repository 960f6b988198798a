#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "recondet/datasets.hpp"
#include "recondet/rng.hpp"

using namespace recondet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image flat_image(int size, float r, float g, float b) {
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

void put_png(const fs::path& path, float shade = 0.25f) {
  save_png(flat_image(8, shade, -shade, 0.f), path.string(), 8);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool same_records(const Manifest& a, const Manifest& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.relpath != y.relpath || x.model != y.model || x.family != y.family ||
        x.split != y.split)
      return false;
  }
  return true;
}

GanConfig tiny_gan() {
  GanConfig cfg;
  cfg.image_size = 8;
  cfg.z_dim = 8;
  cfg.w_dim = 8;
  cfg.wstar_dim = 8;
  cfg.num_layers = 2;
  cfg.channels = {16, 8};
  return cfg;
}

DenoiserConfig tiny_denoiser() {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.base_channels = 8;
  cfg.temb_dim = 8;
  cfg.temb_hidden = 16;
  return cfg;
}

}  // namespace

TEST_CASE("family table maps registered models and rejects unknowns") {
  CHECK(family_label("stylegan2") == Family::gan);
  CHECK(family_label("stylegan1") == Family::gan);
  CHECK(family_label("progan") == Family::gan);
  CHECK(family_label("vqgan") == Family::gan);
  CHECK(family_label("toygan") == Family::gan);
  CHECK(family_label("adm") == Family::dm);
  CHECK(family_label("iddpm") == Family::dm);
  CHECK(family_label("ldm") == Family::dm);
  CHECK(family_label("sde") == Family::dm);
  CHECK(family_label("toydm") == Family::dm);
  CHECK(family_label("real") == Family::real);
  CHECK(known_models().size() == 11);

  CHECK_THROWS_AS(family_label("biggan"), DataError);
  CHECK(error_text([] { family_label("biggan"); }).find("biggan") != std::string::npos);

  CHECK(parse_family("gan") == Family::gan);
  CHECK(parse_family("dm") == Family::dm);
  CHECK(parse_family("real") == Family::real);
  CHECK_THROWS_AS(parse_family("diffusion"), ConfigError);

  CHECK(split_name(Split::train) == std::string("train"));
  CHECK(split_name(Split::test) == std::string("test"));
  CHECK(parse_split("train") == Split::train);
  CHECK(parse_split("test") == Split::test);
  CHECK_THROWS_AS(parse_split("val"), ConfigError);
}

TEST_CASE("scanning finds decodable images under the documented layout") {
  const fs::path root = fresh_dir("recondet_scan_basic");
  put_png(root / "real" / "a.png");
  put_png(root / "real" / "b.png", 0.5f);
  save_jpeg(flat_image(8, 0.1f, 0.2f, 0.3f), (root / "gan" / "stylegan2" / "y.jpg").string(), 90);
  put_png(root / "gan" / "stylegan2" / "x.png");
  put_png(root / "dm" / "ldm" / "z.png");

  // Neither an image extension nor decodable content makes a record.
  std::ofstream(root / "real" / "notes.txt") << "not an image";
  std::ofstream(root / "real" / "broken.png") << "png in name only";

  std::vector<std::string> skipped;
  Manifest m = scan_dataset(root, &skipped);

  REQUIRE(m.records.size() == 5);
  CHECK(m.root == root);
  CHECK(std::is_sorted(m.records.begin(), m.records.end(),
                       [](const ManifestRecord& a, const ManifestRecord& b) {
                         return a.relpath < b.relpath;
                       }));
  for (const auto& r : m.records) CHECK(r.split == Split::train);

  CHECK(m.records[0].relpath == "dm/ldm/z.png");
  CHECK(m.records[0].model == "ldm");
  CHECK(m.records[0].family == Family::dm);
  CHECK(m.records[1].relpath == "gan/stylegan2/x.png");
  CHECK(m.records[1].family == Family::gan);
  CHECK(m.records[2].relpath == "gan/stylegan2/y.jpg");
  CHECK(m.records[3].relpath == "real/a.png");
  CHECK(m.records[3].model == "real");
  CHECK(m.records[3].family == Family::real);
  CHECK(m.records[4].relpath == "real/b.png");

  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0].find("broken.png") != std::string::npos);
}

TEST_CASE("scanning counts three files per leaf as nine records") {
  const fs::path root = fresh_dir("recondet_scan_nine");
  for (int i = 0; i < 3; ++i) {
    put_png(root / "real" / ("r" + std::to_string(i) + ".png"));
    put_png(root / "gan" / "stylegan1" / ("g" + std::to_string(i) + ".png"));
    put_png(root / "dm" / "adm" / ("d" + std::to_string(i) + ".png"));
  }
  CHECK(scan_dataset(root).records.size() == 9);
}

TEST_CASE("scanning rejects bad layouts and reports strays") {
  const fs::path no_real = fresh_dir("recondet_scan_noreal");
  put_png(no_real / "gan" / "stylegan2" / "x.png");
  CHECK_THROWS_AS(scan_dataset(no_real), DataError);

  const fs::path unknown = fresh_dir("recondet_scan_unknown");
  put_png(unknown / "real" / "a.png");
  put_png(unknown / "gan" / "unknownnet" / "x.png");
  CHECK_THROWS_AS(scan_dataset(unknown), DataError);
  CHECK(error_text([&] { scan_dataset(unknown); }).find("unknownnet") != std::string::npos);

  const fs::path misfiled = fresh_dir("recondet_scan_misfiled");
  put_png(misfiled / "real" / "a.png");
  put_png(misfiled / "gan" / "ldm" / "x.png");
  CHECK_THROWS_AS(scan_dataset(misfiled), DataError);

  const fs::path stray = fresh_dir("recondet_scan_stray");
  put_png(stray / "real" / "a.png");
  fs::create_directories(stray / "gan");
  put_png(stray / "gan" / "loose.png");
  std::vector<std::string> skipped;
  Manifest m = scan_dataset(stray, &skipped);
  CHECK(m.records.size() == 1);
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0].find("loose.png") != std::string::npos);
}

TEST_CASE("empty synthetic directories produce a real-only manifest") {
  const fs::path root = fresh_dir("recondet_scan_realonly");
  put_png(root / "real" / "a.png");
  put_png(root / "real" / "b.png");
  fs::create_directories(root / "gan");
  fs::create_directories(root / "dm");
  Manifest m = scan_dataset(root);
  REQUIRE(m.records.size() == 2);
  for (const auto& r : m.records) CHECK(r.family == Family::real);
}

namespace {

fs::path split_fixture_root() {
  static const fs::path root = [] {
    fs::path dir = fresh_dir("recondet_split_fixture");
    for (int i = 0; i < 10; ++i) put_png(dir / "real" / ("r" + std::to_string(i) + ".png"));
    for (int i = 0; i < 6; ++i)
      put_png(dir / "gan" / "stylegan2" / ("g" + std::to_string(i) + ".png"));
    for (int i = 0; i < 6; ++i) put_png(dir / "dm" / "ldm" / ("d" + std::to_string(i) + ".png"));
    return dir;
  }();
  return root;
}

}  // namespace

TEST_CASE("splits draw seeded, disjoint, test before train") {
  Manifest scanned = scan_dataset(split_fixture_root());

  SplitSpec spec;
  spec.train_models = {"stylegan2"};
  spec.test_models = {"ldm"};
  spec.test_per_model = 2;
  spec.train_per_model = -1;
  spec.test_real = 3;
  spec.train_real = -1;

  Manifest split = make_splits(scanned, spec, 99);
  REQUIRE(split.records.size() == 18);

  int train_real = 0, test_real = 0, train_gan = 0, test_gan = 0, train_dm = 0, test_dm = 0;
  std::set<std::string> seen;
  for (const auto& r : split.records) {
    CHECK(seen.insert(r.relpath).second);
    int& slot = r.family == Family::real ? (r.split == Split::train ? train_real : test_real)
                : r.family == Family::gan ? (r.split == Split::train ? train_gan : test_gan)
                                          : (r.split == Split::train ? train_dm : test_dm);
    ++slot;
  }
  CHECK(train_real == 7);
  CHECK(test_real == 3);
  CHECK(train_gan == 6);
  CHECK(test_gan == 0);
  CHECK(train_dm == 0);
  CHECK(test_dm == 2);

  CHECK(same_records(split, make_splits(scanned, spec, 99)));
  CHECK_FALSE(same_records(split, make_splits(scanned, spec, 100)));
}

TEST_CASE("a model listed for both splits stays disjoint") {
  Manifest scanned = scan_dataset(split_fixture_root());
  SplitSpec spec;
  spec.train_models = {"stylegan2"};
  spec.test_models = {"stylegan2"};
  spec.test_per_model = 2;
  spec.train_per_model = 3;
  spec.test_real = 1;
  spec.train_real = 1;

  Manifest split = make_splits(scanned, spec, 5);
  int train_gan = 0, test_gan = 0;
  std::set<std::string> seen;
  for (const auto& r : split.records) {
    CHECK(seen.insert(r.relpath).second);
    if (r.family != Family::gan) continue;
    (r.split == Split::train ? train_gan : test_gan)++;
  }
  CHECK(train_gan == 3);
  CHECK(test_gan == 2);
}

TEST_CASE("the paper-shaped split keeps train paths out of the test set") {
  const fs::path root = fresh_dir("recondet_split_paper");
  const char* gan_models[] = {"stylegan1", "stylegan2", "vqgan"};
  const char* dm_models[] = {"adm", "iddpm", "ldm"};
  for (int i = 0; i < 4; ++i) put_png(root / "real" / ("r" + std::to_string(i) + ".png"));
  for (const char* model : gan_models)
    for (int i = 0; i < 3; ++i)
      put_png(root / "gan" / model / ("g" + std::to_string(i) + ".png"));
  for (const char* model : dm_models)
    for (int i = 0; i < 3; ++i)
      put_png(root / "dm" / model / ("d" + std::to_string(i) + ".png"));

  SplitSpec spec;
  spec.train_models = {"adm", "stylegan1"};
  spec.test_models = {"stylegan2", "vqgan", "iddpm", "ldm"};
  spec.test_per_model = 1;
  spec.train_per_model = 2;
  spec.test_real = 1;
  spec.train_real = 2;

  Manifest split = make_splits(scan_dataset(root), spec, 17);
  std::set<std::string> train_paths, test_paths, test_models;
  for (const auto& r : split.records) {
    (r.split == Split::train ? train_paths : test_paths).insert(r.relpath);
    if (r.split == Split::test && r.family != Family::real) test_models.insert(r.model);
  }
  for (const auto& p : test_paths) CHECK(train_paths.count(p) == 0);
  CHECK(test_models == std::set<std::string>{"stylegan2", "vqgan", "iddpm", "ldm"});
  CHECK(train_paths.size() == 2 + 2 * 2);
  CHECK(test_paths.size() == 1 + 4 * 1);
}

TEST_CASE("split validation names the deficient model") {
  Manifest scanned = scan_dataset(split_fixture_root());

  SplitSpec starving;
  starving.test_models = {"ldm"};
  starving.test_per_model = 7;  // only 6 exist
  starving.test_real = 1;
  starving.train_real = 1;
  CHECK_THROWS_AS(make_splits(scanned, starving, 1), DataError);
  CHECK(error_text([&] { make_splits(scanned, starving, 1); }).find("ldm") != std::string::npos);

  SplitSpec missing;
  missing.train_models = {"progan"};  // registered but not on disk
  missing.train_per_model = 1;
  CHECK_THROWS_AS(make_splits(scanned, missing, 1), DataError);
  CHECK(error_text([&] { make_splits(scanned, missing, 1); }).find("progan") !=
        std::string::npos);

  SplitSpec real_listed;
  real_listed.train_models = {"real"};
  CHECK_THROWS_AS(make_splits(scanned, real_listed, 1), ConfigError);

  SplitSpec negative;
  negative.test_real = -1;
  CHECK_THROWS_AS(make_splits(scanned, negative, 1), ConfigError);

  SplitSpec zero_test;
  zero_test.test_models = {"ldm"};
  zero_test.test_per_model = 0;
  zero_test.train_real = 2;
  zero_test.test_real = 1;
  Manifest split = make_splits(scanned, zero_test, 3);
  for (const auto& r : split.records) CHECK(r.model != "ldm");
}

TEST_CASE("manifest files round trip and reject corruption") {
  const fs::path dir = fresh_dir("recondet_manifest_io");
  Manifest m;
  m.root = "/data/faces";
  m.records.push_back({"dm/ldm/d0.png", "ldm", Family::dm, Split::test});
  m.records.push_back({"gan/stylegan2/g0.png", "stylegan2", Family::gan, Split::train});
  m.records.push_back({"real/r0.png", "real", Family::real, Split::train});

  const fs::path path = dir / "manifest.tsv";
  write_manifest(m, path);

  const std::string bytes = read_bytes(path);
  CHECK(bytes.rfind("# recondet-manifest v1\n", 0) == 0);
  write_manifest(m, path);
  CHECK(read_bytes(path) == bytes);

  Manifest back = read_manifest(path);
  CHECK(back.root == m.root);
  CHECK(same_records(back, m));

  CHECK_THROWS_AS(read_manifest(dir / "absent.tsv"), DependencyError);

  auto corrupt = [&](const std::string& contents) {
    const fs::path p = dir / "bad.tsv";
    std::ofstream(p, std::ios::binary) << contents;
    return p;
  };
  CHECK_THROWS_AS(read_manifest(corrupt("# something else\n")), ConfigError);
  CHECK_THROWS_AS(read_manifest(corrupt("# recondet-manifest v1\n# root\t/d\na\tb\tc\n")),
                  ConfigError);
  CHECK_THROWS_AS(
      read_manifest(corrupt("# recondet-manifest v1\n# root\t/d\nx.png\tldm\tgan\ttrain\n")),
      ConfigError);
  CHECK_THROWS_AS(
      read_manifest(corrupt("# recondet-manifest v1\n# root\t/d\nx.png\tldm\tdm\tval\n")),
      ConfigError);
  CHECK_THROWS_AS(
      read_manifest(corrupt("# recondet-manifest v1\nx.png\tldm\tdm\ttrain\n")), ConfigError);

  Manifest mislabeled;
  mislabeled.root = "/d";
  mislabeled.records.push_back({"x.png", "ldm", Family::gan, Split::train});
  CHECK_THROWS_AS(write_manifest(mislabeled, dir / "never.tsv"), DataError);

  CHECK(select_split(m, Split::train).size() == 2);
  CHECK(select_split(m, Split::test).size() == 1);
  CHECK(select_split(m, Split::test)[0].relpath == "dm/ldm/d0.png");
}

TEST_CASE("toy real images are deterministic face-like rasters") {
  Image a = toy_real_image(24, 7);
  Image b = toy_real_image(24, 7);
  Image c = toy_real_image(24, 8);

  CHECK(a.height == 24);
  CHECK(a.width == 24);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  for (float v : a.data) {
    CHECK(v >= -1.f);
    CHECK(v <= 1.f);
  }

  // Not a flat card: the composition must carry structure.
  double mean = 0;
  for (float v : a.data) mean += v;
  mean /= static_cast<double>(a.data.size());
  double var = 0;
  for (float v : a.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.data.size());
  CHECK(var > 0.01);

  CHECK_THROWS_AS(toy_real_image(4, 1), ConfigError);
}

TEST_CASE("toy dataset generation is staged and seeded") {
  const fs::path root = fresh_dir("recondet_toygen");

  ToyDatasetConfig real_stage;
  real_stage.root = root;
  real_stage.per_class = 4;
  real_stage.image_size = 16;
  real_stage.seed = 42;
  real_stage.want_real = true;
  generate_toy_dataset(real_stage);

  for (int i = 0; i < 4; ++i) {
    Image img = load_image_native((root / "real" / ("real_0000" + std::to_string(i) + ".png")).string());
    CHECK(img.height == 16);
    CHECK(img.width == 16);
  }

  // Synthetic classes refuse to run without their trained generators.
  ToyDatasetConfig gan_stage = real_stage;
  gan_stage.want_real = false;
  gan_stage.want_gan = true;
  gan_stage.per_class = 3;
  CHECK_THROWS_AS(generate_toy_dataset(gan_stage), DependencyError);

  const fs::path gan_ckpt = root / "gan.ckpt";
  GanModel gan(tiny_gan(), 11);
  gan.save(gan_ckpt.string(), 11);
  gan_stage.gan_checkpoint = gan_ckpt;
  generate_toy_dataset(gan_stage);

  ToyDatasetConfig dm_stage = real_stage;
  dm_stage.want_real = false;
  dm_stage.want_dm = true;
  dm_stage.per_class = 3;
  dm_stage.sample_steps = 3;
  CHECK_THROWS_AS(generate_toy_dataset(dm_stage), DependencyError);

  const fs::path dm_ckpt = root / "dm.ckpt";
  Denoiser den(tiny_denoiser(), 13);
  DiffusionSchedule sched = DiffusionSchedule::linear(50);
  den.save(dm_ckpt.string(), sched, 13);
  dm_stage.dm_checkpoint = dm_ckpt;
  generate_toy_dataset(dm_stage);

  Manifest m = scan_dataset(root);
  REQUIRE(m.records.size() == 10);
  int per_family[3] = {0, 0, 0};
  for (const auto& r : m.records) ++per_family[static_cast<int>(r.family)];
  CHECK(per_family[0] == 4);
  CHECK(per_family[1] == 3);
  CHECK(per_family[2] == 3);

  // The same seeds rebuild the same bytes.
  const std::string real0 = read_bytes(root / "real" / "real_00000.png");
  const std::string gan0 = read_bytes(root / "gan" / "toygan" / "gan_00000.png");
  const std::string dm0 = read_bytes(root / "dm" / "toydm" / "dm_00000.png");
  const fs::path again = fresh_dir("recondet_toygen_again");
  ToyDatasetConfig real2 = real_stage;
  real2.root = again;
  generate_toy_dataset(real2);
  ToyDatasetConfig gan2 = gan_stage;
  gan2.root = again;
  generate_toy_dataset(gan2);
  ToyDatasetConfig dm2 = dm_stage;
  dm2.root = again;
  generate_toy_dataset(dm2);
  CHECK(read_bytes(again / "real" / "real_00000.png") == real0);
  CHECK(read_bytes(again / "gan" / "toygan" / "gan_00000.png") == gan0);
  CHECK(read_bytes(again / "dm" / "toydm" / "dm_00000.png") == dm0);

  ToyDatasetConfig bad = real_stage;
  bad.per_class = 0;
  CHECK_THROWS_AS(generate_toy_dataset(bad), ConfigError);
  ToyDatasetConfig none = real_stage;
  none.want_real = false;
  CHECK_THROWS_AS(generate_toy_dataset(none), ConfigError);
}

TEST_CASE("a user-supplied folder feeds the real class") {
  const fs::path source = fresh_dir("recondet_toygen_source");
  for (int i = 0; i < 5; ++i)
    save_png(flat_image(12, 0.1f * i, 0.f, -0.2f),
             (source / ("face" + std::to_string(i) + ".png")).string(), 8);

  ToyDatasetConfig cfg;
  cfg.root = fresh_dir("recondet_toygen_user");
  cfg.per_class = 3;
  cfg.image_size = 16;
  cfg.real_source = source;
  generate_toy_dataset(cfg);

  Manifest m = scan_dataset(cfg.root);
  REQUIRE(m.records.size() == 3);
  Image img = load_image_native((cfg.root / "real" / "real_00000.png").string());
  CHECK(img.height == 16);

  ToyDatasetConfig starving = cfg;
  starving.root = fresh_dir("recondet_toygen_user2");
  starving.per_class = 7;
  CHECK_THROWS_AS(generate_toy_dataset(starving), DataError);

  ToyDatasetConfig no_source = cfg;
  no_source.root = fresh_dir("recondet_toygen_user3");
  no_source.real_source = source / "nowhere";
  CHECK_THROWS_AS(generate_toy_dataset(no_source), DependencyError);
}

TEST_CASE("reconstruction cache stores rows and survives reopening") {
  const fs::path dir = fresh_dir("recondet_cache_basic");

  Image orig = toy_real_image(8, 31);
  Image rg = toy_real_image(8, 32);
  Image rd = toy_real_image(8, 33);
  snap_u16(rg);
  snap_u16(rd);

  ReconCache cache(dir, "gan-1", "dm-1");
  CHECK(cache.size() == 0);
  CHECK_FALSE(cache.has("real/a.png"));
  CHECK_THROWS_AS(cache.load_rg("real/a.png"), DependencyError);

  cache.put("real/a.png", orig, rg, rd);
  cache.put("gan/toygan/b.jpg", orig, rd, rg);
  CHECK(cache.size() == 2);
  CHECK(cache.has("real/a.png"));

  // 16-bit storage hands back the exact planes that went in.
  CHECK(cache.load_rg("real/a.png").data == rg.data);
  CHECK(cache.load_rd("real/a.png").data == rd.data);
  CHECK(cache.entries().at("real/a.png").mse_rg == mse(orig, rg));
  CHECK(cache.entries().at("real/a.png").mse_rd == mse(orig, rd));

  // Non-png inputs gain a png suffix instead of colliding.
  CHECK(fs::exists(dir / "rg" / "gan" / "toygan" / "b.jpg.png"));

  cache.flush();
  const std::string bytes = read_bytes(dir / "index.tsv");
  CHECK(bytes.rfind("# recondet-recon-cache v1\n", 0) == 0);
  cache.flush();
  CHECK(read_bytes(dir / "index.tsv") == bytes);

  ReconCache back(dir, "gan-1", "dm-1");
  CHECK(back.size() == 2);
  CHECK(back.entries().at("real/a.png").mse_rg == mse(orig, rg));
  CHECK(back.load_rd("gan/toygan/b.jpg").data == rg.data);

  // Different checkpoint ids invalidate every row.
  CHECK(ReconCache(dir, "gan-2", "dm-1").size() == 0);
  CHECK(ReconCache(dir, "gan-1", "dm-2").size() == 0);

  // A row whose files vanished is dropped, the rest stay.
  fs::remove(dir / "rd" / "real" / "a.png");
  ReconCache pruned(dir, "gan-1", "dm-1");
  CHECK(pruned.size() == 1);
  CHECK(pruned.has("gan/toygan/b.jpg"));

  const fs::path garbled = fresh_dir("recondet_cache_garbled");
  std::ofstream(garbled / "index.tsv", std::ios::binary) << "not an index\n";
  CHECK_THROWS_AS(ReconCache(garbled, "a", "b"), ConfigError);
}

TEST_CASE("precompute fills the cache once and matches fresh reconstructions") {
  const fs::path root = fresh_dir("recondet_precompute_data");
  ToyDatasetConfig toy;
  toy.root = root;
  toy.per_class = 5;
  toy.image_size = 8;
  toy.seed = 77;
  generate_toy_dataset(toy);
  Manifest m = scan_dataset(root);
  REQUIRE(m.records.size() == 5);

  GanModel gan(tiny_gan(), 21);
  Encoder enc(tiny_gan(), 22);
  Denoiser den(tiny_denoiser(), 23);
  DiffusionSchedule sched = DiffusionSchedule::linear(60);

  ReconParams rp;
  rp.ddim_steps = 3;
  rp.refine_steps = 2;
  rp.refine_lr = 0.05;
  rp.batch = 2;  // five records force chunks of 2, 2, 1
  rp.image_size = 8;

  const fs::path cache_dir = fresh_dir("recondet_precompute_cache");
  ReconCache cache(cache_dir, "g-id", "d-id");
  ReconStats st = precompute_reconstructions(m, den, sched, gan.gen, enc, cache, rp);
  CHECK(st.computed == 5);
  CHECK(st.hits == 0);
  CHECK(st.failures.empty());
  CHECK(cache.size() == 5);

  ReconStats again = precompute_reconstructions(m, den, sched, gan.gen, enc, cache, rp);
  CHECK(again.computed == 0);
  CHECK(again.hits == 5);

  // Cached planes must equal single-image recomputation bit for bit, no
  // matter which chunk originally produced them.
  for (const auto& rel : {m.records.front().relpath, m.records.back().relpath}) {
    Image x = load_image((root / rel).string(), 8);
    Image fresh_rd = reconstruct_dm(den, sched, x, rp.ddim_steps);
    Image fresh_rg = reconstruct_gan(gan.gen, enc, x, rp.refine_steps, rp.refine_lr);
    CHECK(cache.load_rd(rel).data == fresh_rd.data);
    CHECK(cache.load_rg(rel).data == fresh_rg.data);
  }

  // A reopened cache under new checkpoint ids recomputes from scratch.
  ReconCache stale(cache_dir, "g-id", "d-id-2");
  CHECK(stale.size() == 0);
  ReconStats redo = precompute_reconstructions(m, den, sched, gan.gen, enc, stale, rp);
  CHECK(redo.computed == 5);

  // Unreadable inputs land in the failure list without sinking the run.
  Manifest broken = m;
  broken.records.push_back({"real/missing.png", "real", Family::real, Split::train});
  ReconStats partial = precompute_reconstructions(broken, den, sched, gan.gen, enc, cache, rp);
  CHECK(partial.hits == 5);
  CHECK(partial.computed == 0);
  REQUIRE(partial.failures.size() == 1);
  CHECK(partial.failures[0].find("real/missing.png") != std::string::npos);
}
