#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "recondet/denoiser.hpp"
#include "recondet/detector.hpp"
#include "recondet/gan.hpp"
#include "recondet/image.hpp"

namespace recondet {

// Model-family table. Every source model the harness accepts is registered
// here; an unknown name is an error, never a silent default.
Family family_label(const std::string& model_name);
const std::vector<std::string>& known_models();

// Parses "real" / "gan" / "dm" (the manifest's family column).
Family parse_family(const std::string& name);

enum class Split : int { train = 0, test = 1 };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestRecord {
  std::string relpath;  // forward-slash path under the dataset root
  std::string model;    // "real" or a registered generator name
  Family family = Family::real;
  Split split = Split::train;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
};

// Walks root expecting real/, gan/<model>/, dm/<model>/. Image files that
// fail to decode are skipped and reported through `skipped`; a model
// directory whose name is unregistered, or one filed under the wrong
// family, aborts. Records come back sorted by relpath with split left at
// its default.
Manifest scan_dataset(const std::filesystem::path& root,
                      std::vector<std::string>* skipped = nullptr);

struct SplitSpec {
  std::vector<std::string> train_models;  // synthetic models seen in training
  std::vector<std::string> test_models;   // synthetic models held for the bench
  int train_per_model = -1;               // -1 takes whatever the test draw leaves
  int test_per_model = 0;
  int train_real = -1;
  int test_real = 0;
};

// Assigns splits with one seeded shuffle per model (records sorted by path
// first, test drawn before train, so a model listed on both sides stays
// disjoint). Models outside the spec are dropped. Insufficient images is an
// error naming the model.
Manifest make_splits(const Manifest& scanned, const SplitSpec& spec, std::uint64_t seed);

// Line-delimited TSV with a "# recondet-manifest v1" header; human-diffable,
// written atomically.
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Record subsets, manifest order preserved.
std::vector<ManifestRecord> select_split(const Manifest& m, Split split);

// Toy-scale dataset generation. Reals are procedural face-like rasters (or
// a user folder downsampled); synthetic leaves are sampled from trained toy
// generators, which therefore must exist before those classes run.
struct ToyDatasetConfig {
  std::filesystem::path root;
  int per_class = 10;
  int image_size = 32;
  std::uint64_t seed = 0;
  bool want_real = true;
  bool want_gan = false;
  bool want_dm = false;
  std::filesystem::path real_source;     // optional image folder for the real class
  std::filesystem::path gan_checkpoint;  // required when want_gan
  std::filesystem::path dm_checkpoint;   // required when want_dm
  int sample_steps = 20;                 // DDIM grid for dm sampling
};

void generate_toy_dataset(const ToyDatasetConfig& cfg);

// One procedural face-like image; exposed for tests and previews.
Image toy_real_image(int image_size, std::uint64_t seed);

// Persistent reconstruction store: 16-bit PNG trees rg/ and rd/ mirroring
// dataset relpaths plus a TSV index carrying the generator checkpoint ids
// and the reconstruction errors. Rows recorded under other checkpoint ids
// are dropped at open, which is the whole invalidation story.
class ReconCache {
 public:
  struct Entry {
    double mse_rg = 0;
    double mse_rd = 0;
  };

  ReconCache(std::filesystem::path dir, std::string gan_id, std::string dm_id);

  bool has(const std::string& relpath) const;
  std::size_t size() const { return rows_.size(); }
  const std::map<std::string, Entry>& entries() const { return rows_; }

  Image load_rg(const std::string& relpath) const;
  Image load_rd(const std::string& relpath) const;

  // Writes both PNGs immediately and records the row; the originals are
  // needed to pin the stored reconstruction errors.
  void put(const std::string& relpath, const Image& original, const Image& rg, const Image& rd);

  // Atomic index rewrite; rows not flushed are invisible to the next open.
  void flush() const;

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& gan_id() const { return gan_id_; }
  const std::string& dm_id() const { return dm_id_; }

  std::filesystem::path rg_path(const std::string& relpath) const;
  std::filesystem::path rd_path(const std::string& relpath) const;

 private:
  std::filesystem::path dir_;
  std::string gan_id_, dm_id_;
  std::map<std::string, Entry> rows_;
};

struct ReconParams {
  int ddim_steps = 20;
  int refine_steps = 20;
  double refine_lr = 0.05;
  int batch = 16;      // diffusion round trips run chunked
  int image_size = 32;
};

struct ReconStats {
  int computed = 0;
  int hits = 0;
  std::vector<std::string> failures;  // "relpath: reason" per unreadable input
};

// Fills the cache for every manifest record that is not already covered.
// GAN inversions run one sample at a time so a cached image is bit-equal to
// a later single-image call; the diffusion path is batch-stable and runs
// chunked. Flushes the index before returning.
ReconStats precompute_reconstructions(const Manifest& m, Denoiser& den,
                                      const DiffusionSchedule& sched, Generator& gen,
                                      Encoder& enc, ReconCache& cache, const ReconParams& rp);

}  // namespace recondet
