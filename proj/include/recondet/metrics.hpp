#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recondet/datasets.hpp"
#include "recondet/detector.hpp"

namespace recondet {

// Fraction of exact class matches.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths);

// Mean precision-at-rank over the positives, scores ranked descending with
// ties broken by original index. `positives` holds 0/1 flags.
double average_precision(const std::vector<double>& scores, const std::vector<int>& positives);

// One-sided Mann-Whitney p-value for the alternative "values in low tend to
// be smaller than values in high": normal approximation with average ranks,
// tie-corrected variance, and continuity correction. Degenerate spread
// (every value tied) returns 1.
double mann_whitney_p(const std::vector<double>& low, const std::vector<double>& high);

struct SubsetRow {
  std::string subset;  // "real" or a model name
  int count = 0;
  double acc = 0;
  double ap = -1;  // < 0 when undefined; the real row reports ACC only

  bool has_ap() const { return ap >= 0; }
};

struct EvalReport {
  std::string perturbation = "none";  // "none" or a PerturbSpec tag
  InputMode mode = InputMode::cascade_multi;
  std::vector<SubsetRow> rows;  // real first, synthetic subsets sorted by name
  double mean_acc = 0;          // over every row, real included
  double mean_ap = 0;           // over the synthetic rows
};

// One evaluated test sample; the bridge between prediction and reporting.
struct SamplePrediction {
  std::string relpath;
  std::string subset;  // "real" or the source model
  int truth = 0;
  int predicted = 0;
  std::array<double, 3> probs{};
};

// Groups samples per subset: ACC against the row's family everywhere, AP on
// synthetic rows one-vs-real with the subset family's probability as score.
// Requires real samples and at least one synthetic subset.
EvalReport assemble_report(const std::vector<SamplePrediction>& samples, InputMode mode,
                           const std::string& perturbation);

// Runs the detector over records, pulling reconstructions from the cache.
// Chunked with a fixed batch so reruns are deterministic.
std::vector<SamplePrediction> predict_records(Detector& det, const Manifest& m,
                                              const std::vector<ManifestRecord>& records,
                                              const ReconCache& cache, int batch = 32);

// Table-I-shaped evaluation of the manifest's test split.
EvalReport per_subset_report(Detector& det, const Manifest& m, const ReconCache& cache,
                             int batch = 32);

// One report per grid point, after an unperturbed baseline at index 0. Each
// point perturbs the raw test images first and reconstructs them fresh, so
// a level-0 blur reproduces the baseline exactly.
std::vector<EvalReport> robustness_sweep(Detector& det, const Manifest& m, Denoiser& den,
                                         const DiffusionSchedule& sched, Generator& gen,
                                         Encoder& enc, const std::vector<PerturbSpec>& grid,
                                         const ReconParams& rp);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
void write_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

// Fixed-width text table mirroring the ACC/AP column layout, percentages to
// one decimal place.
std::string render_report(const EvalReport& r);

void write_predictions_tsv(const std::vector<SamplePrediction>& samples,
                           const std::filesystem::path& path);

// One line per test sample: relpath, subset, true and predicted family, and
// the detector's pooled feature vector.
void export_embeddings(Detector& det, const Manifest& m, const ReconCache& cache,
                       const std::filesystem::path& path, int batch = 32);

}  // namespace recondet
