#include "recondet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "recondet/checkpoint.hpp"
#include "recondet/common.hpp"

#include "json.hpp"

namespace recondet {

const char* family_name(Family f) {
  switch (f) {
    case Family::real: return "real";
    case Family::gan: return "gan";
    case Family::dm: return "dm";
  }
  throw std::invalid_argument("bad family value");
}

InputMode parse_input_mode(const std::string& name) {
  for (InputMode m : all_input_modes())
    if (name == input_mode_name(m)) return m;
  throw ConfigError("unknown input mode '" + name +
                    "' (expected cascade_multi, cascade_gan, cascade_dm, residual_multi, "
                    "residual_gan, residual_dm)");
}

const char* input_mode_name(InputMode mode) {
  switch (mode) {
    case InputMode::cascade_multi: return "cascade_multi";
    case InputMode::cascade_gan: return "cascade_gan";
    case InputMode::cascade_dm: return "cascade_dm";
    case InputMode::residual_multi: return "residual_multi";
    case InputMode::residual_gan: return "residual_gan";
    case InputMode::residual_dm: return "residual_dm";
  }
  throw std::invalid_argument("bad input mode value");
}

const std::vector<InputMode>& all_input_modes() {
  static const std::vector<InputMode> modes = {
      InputMode::cascade_multi, InputMode::cascade_gan,    InputMode::cascade_dm,
      InputMode::residual_multi, InputMode::residual_gan,  InputMode::residual_dm,
  };
  return modes;
}

int input_channels(InputMode mode) {
  switch (mode) {
    case InputMode::cascade_multi: return 9;
    case InputMode::cascade_gan: return 6;
    case InputMode::cascade_dm: return 6;
    case InputMode::residual_multi: return 6;
    case InputMode::residual_gan: return 3;
    case InputMode::residual_dm: return 3;
  }
  throw std::invalid_argument("bad input mode value");
}

namespace {

void check_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string("build_input: ") + what +
                                " does not match the input dimensions");
}

// Writes the stacked planes for one sample into dst (input_channels * h * w).
void fill_input(float* dst, const Image& x, const Image& rg, const Image& rd, InputMode mode) {
  const std::size_t plane3 = x.data.size();
  auto copy3 = [&](const Image& src) {
    std::memcpy(dst, src.data.data(), plane3 * sizeof(float));
    dst += plane3;
  };
  auto resid3 = [&](const Image& recon) {
    for (std::size_t i = 0; i < plane3; ++i) dst[i] = std::abs(x.data[i] - recon.data[i]);
    dst += plane3;
  };
  switch (mode) {
    case InputMode::cascade_multi: copy3(x); copy3(rg); copy3(rd); return;
    case InputMode::cascade_gan: copy3(x); copy3(rg); return;
    case InputMode::cascade_dm: copy3(x); copy3(rd); return;
    case InputMode::residual_multi: resid3(rg); resid3(rd); return;
    case InputMode::residual_gan: resid3(rg); return;
    case InputMode::residual_dm: resid3(rd); return;
  }
}

}  // namespace

bool mode_uses_gan(InputMode mode) {
  return mode != InputMode::cascade_dm && mode != InputMode::residual_dm;
}

bool mode_uses_dm(InputMode mode) {
  return mode != InputMode::cascade_gan && mode != InputMode::residual_gan;
}

nn::Tensor build_input(const Image& x, const Image& x_rg, const Image& x_rd, InputMode mode) {
  if (x.height < 1 || x.width < 1) throw std::invalid_argument("build_input: empty image");
  if (mode_uses_gan(mode)) check_same_dims(x, x_rg, "the GAN reconstruction");
  if (mode_uses_dm(mode)) check_same_dims(x, x_rd, "the DM reconstruction");
  nn::Tensor out(1, input_channels(mode), x.height, x.width);
  fill_input(out.ptr(), x, x_rg, x_rd, mode);
  return out;
}

nn::Tensor build_input_batch(const std::vector<Image>& x, const std::vector<Image>& x_rg,
                             const std::vector<Image>& x_rd, InputMode mode) {
  if (x.empty()) throw std::invalid_argument("build_input_batch: empty batch");
  const bool need_rg = mode_uses_gan(mode);
  const bool need_rd = mode_uses_dm(mode);
  if ((need_rg && x_rg.size() != x.size()) || (need_rd && x_rd.size() != x.size()))
    throw std::invalid_argument("build_input_batch: reconstruction count mismatch");
  static const Image empty;
  nn::Tensor out(static_cast<int>(x.size()), input_channels(mode), x[0].height, x[0].width);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Image& rg = need_rg ? x_rg[i] : empty;
    const Image& rd = need_rd ? x_rd[i] : empty;
    if (x[i].height != x[0].height || x[i].width != x[0].width)
      throw std::invalid_argument("build_input_batch: images differ in size");
    if (need_rg) check_same_dims(x[i], rg, "the GAN reconstruction");
    if (need_rd) check_same_dims(x[i], rd, "the DM reconstruction");
    fill_input(out.sample(static_cast<int>(i)), x[i], rg, rd, mode);
  }
  return out;
}

std::array<double, 3> softmax3(const std::array<double, 3>& logits) {
  const double m = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> p;
  double sum = 0;
  for (int i = 0; i < 3; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - m);
    sum += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

int argmax3(const std::array<double, 3>& probs) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  return best;
}

double ternary_cross_entropy(int label, const std::array<double, 3>& probs) {
  if (label < 0 || label > 2) throw std::invalid_argument("class label must be 0, 1, or 2");
  const double sum = probs[0] + probs[1] + probs[2];
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("probabilities must sum to 1 within 1e-6");
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-12));
}

double cross_entropy_batch(const nn::Tensor& logits, const std::vector<int>& labels,
                           nn::Tensor* dlogits) {
  if (logits.chw() != 3) throw std::invalid_argument("logits must have three columns");
  if (static_cast<int>(labels.size()) != logits.n)
    throw std::invalid_argument("label count does not match the batch");
  const int n = logits.n;
  if (dlogits) *dlogits = nn::Tensor(n, logits.c, logits.h, logits.w);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label > 2) throw std::invalid_argument("class label must be 0, 1, or 2");
    const float* row = logits.sample(i);
    const std::array<double, 3> p = softmax3({row[0], row[1], row[2]});
    total += -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-12));
    if (dlogits) {
      float* drow = dlogits->sample(i);
      for (int k = 0; k < 3; ++k)
        drow[k] = static_cast<float>((p[static_cast<std::size_t>(k)] - (k == label ? 1.0 : 0.0)) / n);
    }
  }
  return total / n;
}

void DetectorConfig::validate() const {
  if (backbone != "small" && backbone != "resnet50")
    throw ConfigError("detector backbone must be 'small' or 'resnet50'");
  const int div = backbone == "small" ? 4 : 8;
  if (image_size < div || image_size % div != 0)
    throw ConfigError("detector image_size must be a positive multiple of " +
                      std::to_string(div));
}

namespace detail {

DetBlock::DetBlock(const std::string& name, int cin, int cout, Rng& rng)
    : gn1(name + ".gn1", cin, 8),
      gn2(name + ".gn2", cout, 8),
      conv1(name + ".c1", cin, cout, 3, 1, 1, rng),
      conv2(name + ".c2", cout, cout, 3, 1, 1, rng) {
  if (cin != cout) skip = std::make_unique<nn::Conv2d>(name + ".skip", cin, cout, 1, 1, 0, rng);
}

nn::Tensor DetBlock::forward(const nn::Tensor& x, bool train) {
  nn::Tensor h = gn1.forward(x, train);
  h = act1.forward(h, train);
  h = conv1.forward(h, train);
  h = gn2.forward(h, train);
  h = act2.forward(h, train);
  h = conv2.forward(h, train);
  if (skip)
    h += skip->forward(x, train);
  else
    h += x;
  return h;
}

nn::Tensor DetBlock::backward(const nn::Tensor& dy) {
  nn::Tensor d = conv2.backward(dy);
  d = act2.backward(d);
  d = gn2.backward(d);
  d = conv1.backward(d);
  d = act1.backward(d);
  d = gn1.backward(d);
  if (skip)
    d += skip->backward(dy);
  else
    d += dy;
  return d;
}

void DetBlock::collect(std::vector<nn::Param*>& out) {
  gn1.collect(out);
  conv1.collect(out);
  gn2.collect(out);
  conv2.collect(out);
  if (skip) skip->collect(out);
}

Bottleneck::Bottleneck(const std::string& name, int cin, int width, int cout, int stride,
                       Rng& rng)
    : conv1(name + ".c1", cin, width, 1, 1, 0, rng),
      conv2(name + ".c2", width, width, 3, stride, 1, rng),
      conv3(name + ".c3", width, cout, 1, 1, 0, rng),
      gn1(name + ".gn1", width, 32),
      gn2(name + ".gn2", width, 32),
      gn3(name + ".gn3", cout, 32) {
  if (stride != 1 || cin != cout) {
    proj = std::make_unique<nn::Conv2d>(name + ".proj", cin, cout, 1, stride, 0, rng);
    proj_gn = std::make_unique<nn::GroupNorm>(name + ".projgn", cout, 32);
  }
}

nn::Tensor Bottleneck::forward(const nn::Tensor& x, bool train) {
  nn::Tensor h = act1.forward(gn1.forward(conv1.forward(x, train), train), train);
  h = act2.forward(gn2.forward(conv2.forward(h, train), train), train);
  h = gn3.forward(conv3.forward(h, train), train);
  if (proj)
    h += proj_gn->forward(proj->forward(x, train), train);
  else
    h += x;
  return act3.forward(h, train);
}

nn::Tensor Bottleneck::backward(const nn::Tensor& dy) {
  const nn::Tensor d = act3.backward(dy);
  nn::Tensor g = gn3.backward(d);
  g = conv3.backward(g);
  g = act2.backward(g);
  g = gn2.backward(g);
  g = conv2.backward(g);
  g = act1.backward(g);
  g = gn1.backward(g);
  g = conv1.backward(g);
  if (proj)
    g += proj->backward(proj_gn->backward(d));
  else
    g += d;
  return g;
}

void Bottleneck::collect(std::vector<nn::Param*>& out) {
  conv1.collect(out);
  gn1.collect(out);
  conv2.collect(out);
  gn2.collect(out);
  conv3.collect(out);
  gn3.collect(out);
  if (proj) {
    proj->collect(out);
    proj_gn->collect(out);
  }
}

}  // namespace detail

namespace {

constexpr int kSmallWidths[3] = {32, 64, 128};

int backbone_feature_dim(const std::string& backbone) {
  return backbone == "resnet50" ? 2048 : kSmallWidths[2];
}

int stem_out(const std::string& backbone) {
  return backbone == "resnet50" ? 64 : kSmallWidths[0];
}

}  // namespace

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed)
    : Detector(cfg, Rng(Rng::derive(seed, "detector-init"))) {}

Detector::Detector(const DetectorConfig& cfg, Rng rng)
    : cfg_(cfg),
      feature_dim_(backbone_feature_dim(cfg.backbone)),
      stem_("det.stem", input_channels(cfg.mode), stem_out(cfg.backbone), 3, 1, 1, rng),
      out_gn_("det.out_gn", kSmallWidths[2], 8),
      head_("det.head", feature_dim_, 3, rng) {
  cfg_.validate();
  if (cfg.backbone == "small") {
    blocks_.emplace_back("det.b1", kSmallWidths[0], kSmallWidths[0], rng);
    downs_.emplace_back("det.d1", kSmallWidths[0], kSmallWidths[1], 3, 2, 1, rng);
    blocks_.emplace_back("det.b2", kSmallWidths[1], kSmallWidths[1], rng);
    downs_.emplace_back("det.d2", kSmallWidths[1], kSmallWidths[2], 3, 2, 1, rng);
    blocks_.emplace_back("det.b3", kSmallWidths[2], kSmallWidths[2], rng);
  } else {
    stem_gn_ = std::make_unique<nn::GroupNorm>("det.stem_gn", 64, 32);
    stem_act_ = std::make_unique<nn::ReLU>();
    const int widths[4] = {64, 128, 256, 512};
    const int depths[4] = {3, 4, 6, 3};
    int cin = 64;
    for (int s = 0; s < 4; ++s) {
      const int cout = widths[s] * 4;
      for (int b = 0; b < depths[s]; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        bottlenecks_.emplace_back("det.s" + std::to_string(s + 1) + "b" + std::to_string(b + 1),
                                  cin, widths[s], cout, stride, rng);
        cin = cout;
      }
    }
  }
}

nn::Tensor Detector::trunk(const nn::Tensor& x, bool train) {
  if (x.c != input_channels(cfg_.mode))
    throw std::invalid_argument(std::string("detector input has ") + std::to_string(x.c) +
                                " channels but mode " + input_mode_name(cfg_.mode) + " needs " +
                                std::to_string(input_channels(cfg_.mode)));
  nn::Tensor h = stem_.forward(x, train);
  if (cfg_.backbone == "small") {
    h = blocks_[0].forward(h, train);
    h = downs_[0].forward(h, train);
    h = blocks_[1].forward(h, train);
    h = downs_[1].forward(h, train);
    h = blocks_[2].forward(h, train);
    h = out_act_.forward(out_gn_.forward(h, train), train);
  } else {
    h = stem_act_->forward(stem_gn_->forward(h, train), train);
    for (auto& b : bottlenecks_) h = b.forward(h, train);
  }
  return pool_.forward(h, train);
}

nn::Tensor Detector::trunk_backward(const nn::Tensor& dfeat) {
  nn::Tensor d = pool_.backward(dfeat);
  if (cfg_.backbone == "small") {
    d = out_gn_.backward(out_act_.backward(d));
    d = blocks_[2].backward(d);
    d = downs_[1].backward(d);
    d = blocks_[1].backward(d);
    d = downs_[0].backward(d);
    d = blocks_[0].backward(d);
  } else {
    for (auto it = bottlenecks_.rbegin(); it != bottlenecks_.rend(); ++it) d = it->backward(d);
    d = stem_gn_->backward(stem_act_->backward(d));
  }
  return stem_.backward(d);
}

nn::Tensor Detector::logits(const nn::Tensor& x, bool train) {
  return head_.forward(trunk(x, train), train);
}

nn::Tensor Detector::features(const nn::Tensor& x) { return trunk(x, false); }

nn::Tensor Detector::backward(const nn::Tensor& dlogits) {
  return trunk_backward(head_.backward(dlogits));
}

std::vector<nn::Param*> Detector::params() {
  std::vector<nn::Param*> out;
  stem_.collect(out);
  if (cfg_.backbone == "small") {
    blocks_[0].collect(out);
    downs_[0].collect(out);
    blocks_[1].collect(out);
    downs_[1].collect(out);
    blocks_[2].collect(out);
    out_gn_.collect(out);
  } else {
    stem_gn_->collect(out);
    for (auto& b : bottlenecks_) b.collect(out);
  }
  head_.collect(out);
  return out;
}

void Detector::save(const std::string& path, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.kind = "detector";
  ckpt.meta = {{"mode", input_mode_name(cfg_.mode)},
               {"backbone", cfg_.backbone},
               {"image_size", cfg_.image_size},
               {"feature_dim", feature_dim_},
               {"seed", seed}};
  put_params(ckpt, params());
  ckpt.save(path);
}

Detector Detector::load(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "detector")
    throw DependencyError("checkpoint at " + path + " is a '" + ckpt.kind +
                          "', expected a detector");
  DetectorConfig cfg;
  cfg.mode = parse_input_mode(ckpt.meta.at("mode").get<std::string>());
  cfg.backbone = ckpt.meta.at("backbone").get<std::string>();
  cfg.image_size = ckpt.meta.at("image_size").get<int>();
  Detector det(cfg, 0);
  load_params(ckpt, det.params());
  return det;
}

DetectorTrainLog train_detector(Detector& det, const nn::Tensor& x,
                                const std::vector<int>& labels, const DetectorTrainConfig& tc,
                                std::uint64_t seed) {
  if (static_cast<int>(labels.size()) != x.n)
    throw std::invalid_argument("label count does not match the sample count");
  bool seen[3] = {false, false, false};
  for (int label : labels) {
    if (label < 0 || label > 2) throw std::invalid_argument("class label must be 0, 1, or 2");
    seen[label] = true;
  }
  if (!(seen[0] && seen[1] && seen[2]))
    throw DataError("detector training needs all three classes in the stream");

  Rng rng(Rng::derive(seed, "detector-train"));
  nn::Adam opt(det.params(), tc.lr);
  const int n = x.n;
  const int chw = x.chw();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  DetectorTrainLog log;
  int step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    int correct = 0;
    for (int start = 0; start < n; start += tc.batch_size) {
      const int bn = std::min(tc.batch_size, n - start);
      nn::Tensor xb(bn, x.c, x.h, x.w);
      std::vector<int> lb(static_cast<std::size_t>(bn));
      for (int i = 0; i < bn; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        std::memcpy(xb.sample(i), x.sample(src), static_cast<std::size_t>(chw) * sizeof(float));
        lb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
      }

      opt.zero_grad();
      nn::Tensor logits = det.logits(xb, true);
      nn::Tensor dlogits;
      const double loss = cross_entropy_batch(logits, lb, &dlogits);
      if (!std::isfinite(loss))
        throw TrainingError("detector loss became non-finite at step " + std::to_string(step));
      for (int i = 0; i < bn; ++i) {
        const float* row = logits.sample(i);
        const int pred = argmax3({row[0], row[1], row[2]});
        if (pred == lb[static_cast<std::size_t>(i)]) ++correct;
      }
      det.backward(dlogits);
      opt.step();

      if (step % tc.log_every == 0) log.losses.emplace_back(step, loss);
      log.final_loss = loss;
      ++step;
    }
    log.epoch_accuracy.push_back(static_cast<double>(correct) / n);
  }
  return log;
}

DetectorPrediction predict(Detector& det, const nn::Tensor& x) {
  nn::Tensor logits = det.logits(x, false);
  DetectorPrediction out;
  out.probs.reserve(static_cast<std::size_t>(x.n));
  out.label.reserve(static_cast<std::size_t>(x.n));
  for (int i = 0; i < x.n; ++i) {
    const float* row = logits.sample(i);
    const std::array<double, 3> p = softmax3({row[0], row[1], row[2]});
    out.probs.push_back(p);
    out.label.push_back(argmax3(p));
  }
  return out;
}

}  // namespace recondet
