#include "recondet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace recondet {

namespace fs = std::filesystem;

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  if (predictions.size() != truths.size())
    throw std::invalid_argument("accuracy: length mismatch");
  int ok = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(predictions.size());
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& positives) {
  if (scores.empty()) throw std::invalid_argument("average_precision: empty input");
  if (scores.size() != positives.size())
    throw std::invalid_argument("average_precision: length mismatch");
  int npos = 0;
  for (int p : positives) {
    if (p != 0 && p != 1) throw std::invalid_argument("average_precision: labels must be 0 or 1");
    npos += p;
  }
  if (npos == 0) throw std::invalid_argument("average_precision: no positives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // ties keep original order
  });

  double sum = 0;
  int tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return sum / npos;
}

double mann_whitney_p(const std::vector<double>& low, const std::vector<double>& high) {
  if (low.empty() || high.empty()) throw std::invalid_argument("mann_whitney_p: empty group");
  const double n1 = static_cast<double>(low.size());
  const double n2 = static_cast<double>(high.size());
  const std::size_t n = low.size() + high.size();

  std::vector<std::pair<double, int>> pooled;  // value, group flag (0 = low)
  pooled.reserve(n);
  for (double v : low) pooled.emplace_back(v, 0);
  for (double v : high) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_low = 0, tie_term = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second == 0) rank_low += rank;
    i = j;
  }

  const double u1 = rank_low - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double nn = static_cast<double>(n);
  const double var = n1 * n2 / 12.0 * (nn + 1.0 - tie_term / (nn * (nn - 1.0)));
  if (var <= 0) return 1.0;
  const double z = (u1 + 0.5 - mu) / std::sqrt(var);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

EvalReport assemble_report(const std::vector<SamplePrediction>& samples, InputMode mode,
                           const std::string& perturbation) {
  if (samples.empty()) throw DataError("no evaluated samples to report on");

  std::map<std::string, std::vector<const SamplePrediction*>> groups;
  for (const auto& s : samples) groups[s.subset].push_back(&s);
  auto real_it = groups.find("real");
  if (real_it == groups.end()) throw DataError("evaluation needs real test samples");
  if (groups.size() < 2) throw DataError("evaluation needs at least one synthetic subset");

  auto subset_acc = [](const std::vector<const SamplePrediction*>& g) {
    int ok = 0;
    for (const auto* s : g)
      if (s->predicted == s->truth) ++ok;
    return static_cast<double>(ok) / static_cast<double>(g.size());
  };

  EvalReport rep;
  rep.mode = mode;
  rep.perturbation = perturbation;
  rep.rows.push_back(
      {"real", static_cast<int>(real_it->second.size()), subset_acc(real_it->second), -1});

  for (const auto& [name, group] : groups) {
    if (name == "real") continue;
    const int fam = group.front()->truth;
    for (const auto* s : group)
      if (s->truth != fam)
        throw DataError("subset '" + name + "' mixes family labels");

    // One-vs-real ranking: the subset's samples are the positives, the real
    // test samples the negatives, and the score is the probability the
    // detector assigns to the subset's family.
    std::vector<double> scores;
    std::vector<int> flags;
    scores.reserve(group.size() + real_it->second.size());
    for (const auto* s : group) {
      scores.push_back(s->probs[static_cast<std::size_t>(fam)]);
      flags.push_back(1);
    }
    for (const auto* s : real_it->second) {
      scores.push_back(s->probs[static_cast<std::size_t>(fam)]);
      flags.push_back(0);
    }

    rep.rows.push_back({name, static_cast<int>(group.size()), subset_acc(group),
                        average_precision(scores, flags)});
  }

  double acc_sum = 0, ap_sum = 0;
  int ap_count = 0;
  for (const auto& row : rep.rows) {
    acc_sum += row.acc;
    if (row.has_ap()) {
      ap_sum += row.ap;
      ++ap_count;
    }
  }
  rep.mean_acc = acc_sum / static_cast<double>(rep.rows.size());
  rep.mean_ap = ap_sum / static_cast<double>(ap_count);
  return rep;
}

std::vector<SamplePrediction> predict_records(Detector& det, const Manifest& m,
                                              const std::vector<ManifestRecord>& records,
                                              const ReconCache& cache, int batch) {
  if (batch < 1) throw ConfigError("prediction batch must be >= 1");
  const InputMode mode = det.config().mode;
  const int size = det.config().image_size;
  const bool need_rg = mode_uses_gan(mode);
  const bool need_rd = mode_uses_dm(mode);

  std::vector<SamplePrediction> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(records.size(), start + static_cast<std::size_t>(batch));
    std::vector<Image> xs, rgs, rds;
    for (std::size_t i = start; i < stop; ++i) {
      const auto& rec = records[i];
      xs.push_back(load_image((m.root / fs::path(rec.relpath)).string(), size));
      if (need_rg) rgs.push_back(cache.load_rg(rec.relpath));
      if (need_rd) rds.push_back(cache.load_rd(rec.relpath));
    }
    const nn::Tensor input = build_input_batch(xs, rgs, rds, mode);
    const DetectorPrediction pred = predict(det, input);
    for (std::size_t i = start; i < stop; ++i) {
      const auto& rec = records[i];
      out.push_back({rec.relpath, rec.model, static_cast<int>(rec.family),
                     pred.label[i - start], pred.probs[i - start]});
    }
  }
  return out;
}

EvalReport per_subset_report(Detector& det, const Manifest& m, const ReconCache& cache,
                             int batch) {
  const auto records = select_split(m, Split::test);
  if (records.empty()) throw DataError("manifest has no test split");
  const auto samples = predict_records(det, m, records, cache, batch);
  return assemble_report(samples, det.config().mode, "none");
}

std::vector<EvalReport> robustness_sweep(Detector& det, const Manifest& m, Denoiser& den,
                                         const DiffusionSchedule& sched, Generator& gen,
                                         Encoder& enc, const std::vector<PerturbSpec>& grid,
                                         const ReconParams& rp) {
  for (const auto& spec : grid) {
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (rp.image_size != det.config().image_size)
    throw ConfigError("sweep image size differs from the detector's");
  if (rp.batch < 1) throw ConfigError("recon batch must be >= 1");
  const auto records = select_split(m, Split::test);
  if (records.empty()) throw DataError("manifest has no test split");

  const InputMode mode = det.config().mode;
  const bool need_rg = mode_uses_gan(mode);
  const bool need_rd = mode_uses_dm(mode);

  // Every grid point, the baseline included, walks this exact path; a
  // perturbation that happens to be the identity therefore reproduces the
  // baseline report bit for bit.
  auto eval_point = [&](const PerturbSpec* spec) {
    std::vector<SamplePrediction> samples;
    samples.reserve(records.size());
    for (std::size_t start = 0; start < records.size();
         start += static_cast<std::size_t>(rp.batch)) {
      const std::size_t stop = std::min(records.size(), start + static_cast<std::size_t>(rp.batch));
      std::vector<Image> xs;
      for (std::size_t i = start; i < stop; ++i) {
        Image x = load_image((m.root / fs::path(records[i].relpath)).string(), rp.image_size);
        if (spec) x = apply_perturbation(x, *spec);
        xs.push_back(std::move(x));
      }
      std::vector<Image> rgs, rds;
      if (need_rd) rds = reconstruct_dm_batch(den, sched, xs, rp.ddim_steps);
      if (need_rg) {
        rgs.reserve(xs.size());
        for (const auto& x : xs)
          rgs.push_back(reconstruct_gan(gen, enc, x, rp.refine_steps, rp.refine_lr));
      }
      const nn::Tensor input = build_input_batch(xs, rgs, rds, mode);
      const DetectorPrediction pred = predict(det, input);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& rec = records[i];
        samples.push_back({rec.relpath, rec.model, static_cast<int>(rec.family),
                           pred.label[i - start], pred.probs[i - start]});
      }
    }
    return assemble_report(samples, mode, spec ? spec->tag() : "none");
  };

  std::vector<EvalReport> out;
  out.reserve(grid.size() + 1);
  out.push_back(eval_point(nullptr));
  for (const auto& spec : grid) out.push_back(eval_point(&spec));
  return out;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json jr = {{"subset", row.subset}, {"count", row.count}, {"acc", row.acc}};
    if (row.has_ap()) jr["ap"] = row.ap;
    rows.push_back(std::move(jr));
  }
  return nlohmann::json{{"perturbation", r.perturbation},
                        {"mode", input_mode_name(r.mode)},
                        {"rows", std::move(rows)},
                        {"mean_acc", r.mean_acc},
                        {"mean_ap", r.mean_ap}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.perturbation = j.at("perturbation").get<std::string>();
    r.mode = parse_input_mode(j.at("mode").get<std::string>());
    for (const auto& jr : j.at("rows")) {
      SubsetRow row;
      row.subset = jr.at("subset").get<std::string>();
      row.count = jr.at("count").get<int>();
      row.acc = jr.at("acc").get<double>();
      row.ap = jr.contains("ap") ? jr.at("ap").get<double>() : -1.0;
      r.rows.push_back(std::move(row));
    }
    r.mean_acc = j.at("mean_acc").get<double>();
    r.mean_ap = j.at("mean_ap").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed eval report: ") + e.what());
  }
}

void write_report(const EvalReport& r, const fs::path& path) {
  atomic_write_text(path.string(), report_to_json(r).dump(2) + "\n");
}

EvalReport read_report(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("report not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report is not valid json: " + path.string() + " (" + e.what() + ")");
  }
  return report_from_json(j);
}

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

std::string render_report(const EvalReport& r) {
  std::ostringstream os;
  os << "mode " << input_mode_name(r.mode) << ", perturbation " << r.perturbation << "\n\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s %6s %7s %7s\n", "subset", "n", "ACC%", "AP%");
  os << line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof(line), "%-14s %6d %7s %7s\n", row.subset.c_str(), row.count,
                  percent(row.acc).c_str(), row.has_ap() ? percent(row.ap).c_str() : "-");
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-14s %6s %7s %7s\n", "avg", "-", percent(r.mean_acc).c_str(),
                percent(r.mean_ap).c_str());
  os << line;
  return os.str();
}

void write_predictions_tsv(const std::vector<SamplePrediction>& samples, const fs::path& path) {
  std::ostringstream os;
  os << "# recondet-predictions v1\n";
  os << "# columns\trelpath\tsubset\ttruth\tpredicted\tp_real\tp_gan\tp_dm\n";
  char num[40];
  for (const auto& s : samples) {
    os << s.relpath << '\t' << s.subset << '\t' << family_name(static_cast<Family>(s.truth))
       << '\t' << family_name(static_cast<Family>(s.predicted));
    for (double p : s.probs) {
      std::snprintf(num, sizeof(num), "%.17g", p);
      os << '\t' << num;
    }
    os << '\n';
  }
  atomic_write_text(path.string(), os.str());
}

void export_embeddings(Detector& det, const Manifest& m, const ReconCache& cache,
                       const fs::path& path, int batch) {
  if (batch < 1) throw ConfigError("embedding batch must be >= 1");
  const auto records = select_split(m, Split::test);
  if (records.empty()) throw DataError("manifest has no test split");

  const InputMode mode = det.config().mode;
  const int size = det.config().image_size;
  const bool need_rg = mode_uses_gan(mode);
  const bool need_rd = mode_uses_dm(mode);

  std::ostringstream os;
  os << "# recondet-embeddings v1\n";
  os << "# columns\trelpath\tsubset\ttruth\tpredicted\tfeature[" << det.feature_dim() << "]\n";
  char num[40];
  for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(records.size(), start + static_cast<std::size_t>(batch));
    std::vector<Image> xs, rgs, rds;
    for (std::size_t i = start; i < stop; ++i) {
      const auto& rec = records[i];
      xs.push_back(load_image((m.root / fs::path(rec.relpath)).string(), size));
      if (need_rg) rgs.push_back(cache.load_rg(rec.relpath));
      if (need_rd) rds.push_back(cache.load_rd(rec.relpath));
    }
    const nn::Tensor input = build_input_batch(xs, rgs, rds, mode);
    const nn::Tensor feats = det.features(input);
    const DetectorPrediction pred = predict(det, input);
    const int dim = feats.chw();
    for (std::size_t i = start; i < stop; ++i) {
      const auto& rec = records[i];
      os << rec.relpath << '\t' << rec.model << '\t' << family_name(rec.family) << '\t'
         << family_name(static_cast<Family>(pred.label[i - start]));
      const float* row = feats.data.data() + (i - start) * static_cast<std::size_t>(dim);
      for (int d = 0; d < dim; ++d) {
        std::snprintf(num, sizeof(num), "%.9g", static_cast<double>(row[d]));
        os << '\t' << num;
      }
      os << '\n';
    }
  }
  atomic_write_text(path.string(), os.str());
}

}  // namespace recondet
