#include "recondet/gan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "recondet/common.hpp"
#include "recondet/denoiser.hpp"

namespace recondet {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Copies the per-layer slice w[:, l*d .. (l+1)*d) into its own (n, d) tensor.
nn::Tensor slice_cols(const nn::Tensor& w, int offset, int width) {
  nn::Tensor out = nn::Tensor::vec(w.n, width);
  const int total = w.chw();
  for (int n = 0; n < w.n; ++n)
    for (int i = 0; i < width; ++i)
      out.data[static_cast<std::size_t>(n) * width + i] =
          w.data[static_cast<std::size_t>(n) * total + offset + i];
  return out;
}

void add_into_cols(nn::Tensor& w, int offset, const nn::Tensor& part) {
  const int total = w.chw();
  const int width = part.chw();
  for (int n = 0; n < w.n; ++n)
    for (int i = 0; i < width; ++i)
      w.data[static_cast<std::size_t>(n) * total + offset + i] +=
          part.data[static_cast<std::size_t>(n) * width + i];
}

nn::Tensor concat_rows(const nn::Tensor& a, const nn::Tensor& b) {
  nn::Tensor out = nn::Tensor::vec(a.n, a.chw() + b.chw());
  for (int n = 0; n < a.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + a.chw(), out.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.chw(), out.sample(n) + a.chw());
  }
  return out;
}

}  // namespace

void GanConfig::validate() const {
  if (static_cast<int>(channels.size()) != num_layers)
    throw ConfigError("gan channel ladder must list one width per layer");
  if (num_layers < 1) throw ConfigError("gan needs at least one layer");
  if (image_size != 4 << (num_layers - 1))
    throw ConfigError("gan image_size must equal 4 * 2^(num_layers-1)");
  for (int c : channels)
    if (c < 8) throw ConfigError("gan channel widths must be at least 8");
  if (z_dim < 1 || w_dim < 1 || wstar_dim < 1)
    throw ConfigError("gan latent dims must be positive");
}

// ---------------------------------------------------------------- MappingNet

MappingNet::MappingNet(const GanConfig& cfg, std::uint64_t seed)
    : MappingNet(cfg, Rng(Rng::derive(seed, "mapping-init"))) {}

MappingNet::MappingNet(const GanConfig& cfg, Rng rng)
    : cfg_(cfg),
      fc1_("map.fc1", cfg.z_dim, 128, rng),
      fc2_("map.fc2", 128, cfg.latent_dim(), rng) {}

void MappingNet::forward(const nn::Tensor& z, nn::Tensor& w, nn::Tensor& wstar, bool train) {
  nn::Tensor out = fc2_.forward(act_.forward(fc1_.forward(z, train), train), train);
  const int wd = cfg_.num_layers * cfg_.w_dim;
  w = slice_cols(out, 0, wd);
  wstar = slice_cols(out, wd, cfg_.wstar_dim);
}

void MappingNet::backward(const nn::Tensor& dw, const nn::Tensor& dwstar) {
  nn::Tensor dout = concat_rows(dw, dwstar);
  fc1_.backward(act_.backward(fc2_.backward(dout)));
}

std::vector<nn::Param*> MappingNet::params() {
  std::vector<nn::Param*> out;
  fc1_.collect(out);
  fc2_.collect(out);
  return out;
}

// ---------------------------------------------------------------- Generator

Generator::Generator(const GanConfig& cfg, std::uint64_t seed)
    : Generator(cfg, Rng(Rng::derive(seed, "generator-init"))) {}

Generator::Generator(const GanConfig& cfg, Rng rng)
    : cfg_(cfg),
      const_("g.const", nn::Tensor(1, cfg.channels.at(0), 4, 4)),
      wstar_fc_("g.wstar_fc", cfg.wstar_dim, cfg.channels.at(0) * 16, rng),
      to_rgb_("g.to_rgb", cfg.channels.back(), 3, 1, 1, 0, rng) {
  cfg_.validate();
  rng.fill_normal(const_.value.data, 0.f, 1.f);
  for (int l = 0; l < cfg.num_layers; ++l) {
    detail::StyleBlock b;
    const int cin = l == 0 ? cfg.channels[0] : cfg.channels[static_cast<std::size_t>(l) - 1];
    const int cout = cfg.channels[static_cast<std::size_t>(l)];
    if (l > 0) b.up = std::make_unique<nn::UpsampleNearest2x>();
    b.conv = std::make_unique<nn::Conv2d>("g.b" + std::to_string(l) + ".conv", cin, cout, 3, 1,
                                          1, rng);
    b.affine = std::make_unique<nn::Linear>("g.b" + std::to_string(l) + ".affine", cfg.w_dim,
                                            2 * cout, rng);
    blocks_.push_back(std::move(b));
  }
}

nn::Tensor Generator::forward(const nn::Tensor& w, const nn::Tensor& wstar, bool train) {
  if (w.chw() != cfg_.num_layers * cfg_.w_dim || w.n != wstar.n ||
      wstar.chw() != cfg_.wstar_dim)
    throw std::invalid_argument("generator latent shape mismatch");

  const int n = w.n;
  const int c0 = cfg_.channels[0];
  nn::Tensor shift = wstar_fc_.forward(wstar, train);  // (n, c0*16)
  nn::Tensor x(n, c0, 4, 4);
  for (int i = 0; i < n; ++i) {
    const float* cs = const_.value.ptr();
    const float* sh = shift.sample(i);
    float* dst = x.sample(i);
    for (int j = 0; j < c0 * 16; ++j) dst[j] = cs[j] + sh[j];
  }

  for (int l = 0; l < cfg_.num_layers; ++l) {
    auto& b = blocks_[static_cast<std::size_t>(l)];
    if (b.up) x = b.up->forward(x, train);
    x = b.conv->forward(x, train);
    nn::Tensor wl = slice_cols(w, l * cfg_.w_dim, cfg_.w_dim);
    if (train) b.style_cache = wl;
    nn::Tensor a = b.affine->forward(wl, train);  // (n, 2*cout)
    const int cout = x.c;
    nn::Tensor scale = slice_cols(a, 0, cout);
    for (auto& v : scale.data) v += 1.f;
    nn::Tensor bias = slice_cols(a, cout, cout);
    x = b.adain.forward(x, scale, bias, train);
    x = b.lrelu.forward(x, train);
  }
  return tanh_.forward(to_rgb_.forward(x, train), train);
}

void Generator::backward(const nn::Tensor& dimg, nn::Tensor& dw, nn::Tensor& dwstar) {
  nn::Tensor d = to_rgb_.backward(tanh_.backward(dimg));
  dw = nn::Tensor::vec(dimg.n, cfg_.num_layers * cfg_.w_dim);

  for (int l = cfg_.num_layers - 1; l >= 0; --l) {
    auto& b = blocks_[static_cast<std::size_t>(l)];
    d = b.lrelu.backward(d);
    nn::Tensor dscale, dbias;
    d = b.adain.backward(d, dscale, dbias);
    nn::Tensor da = concat_rows(dscale, dbias);
    nn::Tensor dwl = b.affine->backward(da);
    add_into_cols(dw, l * cfg_.w_dim, dwl);
    d = b.conv->backward(d);
    if (b.up) d = b.up->backward(d);
  }

  // Constant-path split: every sample sees the same learned constant.
  for (int i = 0; i < d.n; ++i) {
    const float* src = d.sample(i);
    float* g = const_.grad.ptr();
    for (int j = 0; j < d.chw(); ++j) g[j] += src[j];
  }
  dwstar = wstar_fc_.backward(d);
}

std::vector<nn::Param*> Generator::params() {
  std::vector<nn::Param*> out;
  out.push_back(&const_);
  wstar_fc_.collect(out);
  for (auto& b : blocks_) {
    b.conv->collect(out);
    b.affine->collect(out);
  }
  to_rgb_.collect(out);
  return out;
}

// ---------------------------------------------------------------- Discriminator

Discriminator::Discriminator(const GanConfig& cfg, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "discriminator-init"));
  const int s8 = cfg.image_size / 8;
  if (s8 < 1) throw ConfigError("discriminator needs image_size >= 8");
  seq_.add(std::make_unique<nn::Conv2d>("d.c1", 3, 32, 3, 2, 1, rng));
  seq_.add(std::make_unique<nn::LeakyReLU>());
  seq_.add(std::make_unique<nn::Conv2d>("d.c2", 32, 64, 3, 2, 1, rng));
  seq_.add(std::make_unique<nn::LeakyReLU>());
  seq_.add(std::make_unique<nn::Conv2d>("d.c3", 64, 128, 3, 2, 1, rng));
  seq_.add(std::make_unique<nn::LeakyReLU>());
  seq_.add(std::make_unique<nn::Linear>("d.fc", 128 * s8 * s8, 1, rng));
}

nn::Tensor Discriminator::forward(const nn::Tensor& x, bool train) {
  return seq_.forward(x, train);
}

nn::Tensor Discriminator::backward(const nn::Tensor& dscore) { return seq_.backward(dscore); }

std::vector<nn::Param*> Discriminator::params() {
  std::vector<nn::Param*> out;
  seq_.collect(out);
  return out;
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const GanConfig& cfg, std::uint64_t seed)
    : Encoder(cfg, Rng(Rng::derive(seed, "encoder-init"))) {}

Encoder::Encoder(const GanConfig& cfg, Rng rng)
    : cfg_(cfg),
      head_w_("e.head_w", 256, cfg.num_layers * cfg.w_dim, rng),
      head_wstar_("e.head_wstar", 256, cfg.wstar_dim, rng) {
  const int s8 = cfg.image_size / 8;
  trunk_.add(std::make_unique<nn::Conv2d>("e.c1", 3, 32, 3, 2, 1, rng));
  trunk_.add(std::make_unique<nn::LeakyReLU>());
  trunk_.add(std::make_unique<nn::Conv2d>("e.c2", 32, 64, 3, 2, 1, rng));
  trunk_.add(std::make_unique<nn::LeakyReLU>());
  trunk_.add(std::make_unique<nn::Conv2d>("e.c3", 64, 128, 3, 2, 1, rng));
  trunk_.add(std::make_unique<nn::LeakyReLU>());
  trunk_.add(std::make_unique<nn::Linear>("e.fc", 128 * s8 * s8, 256, rng));
  trunk_.add(std::make_unique<nn::LeakyReLU>());
}

void Encoder::forward(const nn::Tensor& x, nn::Tensor& w, nn::Tensor& wstar, bool train) {
  nn::Tensor h = trunk_.forward(x, train);
  w = head_w_.forward(h, train);
  wstar = head_wstar_.forward(h, train);
}

void Encoder::backward(const nn::Tensor& dw, const nn::Tensor& dwstar) {
  nn::Tensor dh = head_w_.backward(dw);
  dh += head_wstar_.backward(dwstar);
  trunk_.backward(dh);
}

std::vector<nn::Param*> Encoder::params() {
  std::vector<nn::Param*> out;
  trunk_.collect(out);
  head_w_.collect(out);
  head_wstar_.collect(out);
  return out;
}

namespace {

nlohmann::json gan_config_json(const GanConfig& cfg) {
  return {
      {"image_size", cfg.image_size},   {"z_dim", cfg.z_dim},
      {"w_dim", cfg.w_dim},             {"num_layers", cfg.num_layers},
      {"wstar_dim", cfg.wstar_dim},     {"channels", cfg.channels},
  };
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
  GanConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.z_dim = j.at("z_dim").get<int>();
  cfg.w_dim = j.at("w_dim").get<int>();
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.wstar_dim = j.at("wstar_dim").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  return cfg;
}

}  // namespace

void Encoder::save(const std::string& path, const GanConfig& cfg, std::uint64_t seed) {
  Checkpoint ck;
  ck.kind = "encoder";
  ck.meta = {{"gan", gan_config_json(cfg)}, {"seed", seed}};
  put_params(ck, params());
  ck.save(path);
  write_digest_sidecar(path);
}

Encoder Encoder::load(const std::string& path, GanConfig* cfg_out) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "encoder") throw DependencyError("expected an encoder checkpoint at " + path);
  GanConfig cfg = gan_config_from_json(ck.meta.at("gan"));
  Encoder enc(cfg, 0);
  load_params(ck, enc.params());
  if (cfg_out) *cfg_out = cfg;
  return enc;
}

// ---------------------------------------------------------------- GanModel

GanModel::GanModel(const GanConfig& cfg_in, std::uint64_t seed)
    : cfg(cfg_in),
      mapping(cfg_in, Rng::derive(seed, "gan")),
      gen(cfg_in, Rng::derive(seed, "gan")),
      disc(cfg_in, Rng::derive(seed, "gan")) {
  cfg.validate();
}

void GanModel::save(const std::string& path, std::uint64_t seed) {
  Checkpoint ck;
  ck.kind = "gan";
  ck.meta = {{"gan", gan_config_json(cfg)}, {"seed", seed}};
  put_params(ck, mapping.params());
  put_params(ck, gen.params());
  put_params(ck, disc.params());
  ck.save(path);
  write_digest_sidecar(path);
}

GanModel GanModel::load(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "gan") throw DependencyError("expected a gan checkpoint at " + path);
  GanModel model(gan_config_from_json(ck.meta.at("gan")), 0);
  std::vector<nn::Param*> all = model.mapping.params();
  for (auto* p : model.gen.params()) all.push_back(p);
  for (auto* p : model.disc.params()) all.push_back(p);
  load_params(ck, all);
  return model;
}

// ---------------------------------------------------------------- training

GanTrainLog train_gan(GanModel& model, const std::vector<Image>& images,
                      const GanTrainConfig& tc, std::uint64_t seed) {
  if (images.empty()) throw TrainingError("gan training needs at least one image");
  const int size = model.cfg.image_size;
  const int m = tc.batch_size;
  Rng rng(Rng::derive(seed, "gan-train"));

  std::vector<nn::Param*> g_params = model.mapping.params();
  for (auto* p : model.gen.params()) g_params.push_back(p);
  nn::Adam opt_g(g_params, tc.lr, 0.5, 0.999);
  nn::Adam opt_d(model.disc.params(), tc.lr, 0.5, 0.999);

  GanTrainLog log;
  for (int step = 0; step < tc.steps; ++step) {
    // ---- discriminator update
    nn::Tensor z(m, model.cfg.z_dim, 1, 1);
    rng.fill_normal(z.data, 0.f, 1.f);
    nn::Tensor w, wstar;
    model.mapping.forward(z, w, wstar, false);
    nn::Tensor fake = model.gen.forward(w, wstar, false);

    nn::Tensor batch(3 * m, 3, size, size);
    const std::size_t chw = static_cast<std::size_t>(batch.chw());
    for (int i = 0; i < m; ++i) {
      const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(images.size()) - 1);
      const Image& img = images[static_cast<std::size_t>(pick)];
      if (img.height != size || img.width != size)
        throw TrainingError("gan training image size mismatch");
      std::copy(img.data.begin(), img.data.end(), batch.sample(i));
    }
    for (int i = 0; i < m; ++i)
      std::copy(fake.sample(i), fake.sample(i) + chw, batch.sample(m + i));
    // Slope probes: same real images pushed a fixed distance along a random
    // unit direction.
    for (int i = 0; i < m; ++i) {
      std::vector<float> u(chw);
      rng.fill_normal(u, 0.f, 1.f);
      double norm = 0;
      for (float v : u) norm += static_cast<double>(v) * v;
      norm = std::sqrt(std::max(norm, 1e-12));
      const float* src = batch.sample(i);
      float* dst = batch.sample(2 * m + i);
      for (std::size_t j = 0; j < chw; ++j)
        dst[j] = src[j] + static_cast<float>(tc.fd_h * u[j] / norm);
    }

    opt_d.zero_grad();
    nn::Tensor s = model.disc.forward(batch, true);
    double d_loss = 0;
    nn::Tensor ds(3 * m, 1, 1, 1);
    for (int i = 0; i < m; ++i) {
      const double sr = s.data[static_cast<std::size_t>(i)];
      const double sf = s.data[static_cast<std::size_t>(m + i)];
      const double sp = s.data[static_cast<std::size_t>(2 * m + i)];
      d_loss += (softplus(-sr) + softplus(sf)) / m;
      ds.data[static_cast<std::size_t>(i)] = static_cast<float>(-sigmoid(-sr) / m);
      ds.data[static_cast<std::size_t>(m + i)] = static_cast<float>(sigmoid(sf) / m);
      const double slope = (sp - sr) / tc.fd_h;
      d_loss += tc.fd_gamma * slope * slope / m;
      const double dslope = tc.fd_gamma * 2.0 * slope / (tc.fd_h * m);
      ds.data[static_cast<std::size_t>(i)] += static_cast<float>(-dslope);
      ds.data[static_cast<std::size_t>(2 * m + i)] = static_cast<float>(dslope);
    }
    if (!std::isfinite(d_loss))
      throw TrainingError("discriminator loss became non-finite at step " +
                          std::to_string(step));
    model.disc.backward(ds);
    opt_d.step();

    // ---- generator update
    opt_g.zero_grad();
    nn::Tensor z2(m, model.cfg.z_dim, 1, 1);
    rng.fill_normal(z2.data, 0.f, 1.f);
    nn::Tensor w2, wstar2;
    model.mapping.forward(z2, w2, wstar2, true);
    nn::Tensor fake2 = model.gen.forward(w2, wstar2, true);
    nn::Tensor s2 = model.disc.forward(fake2, true);
    double g_loss = 0;
    nn::Tensor ds2(m, 1, 1, 1);
    for (int i = 0; i < m; ++i) {
      const double v = s2.data[static_cast<std::size_t>(i)];
      g_loss += softplus(-v) / m;
      ds2.data[static_cast<std::size_t>(i)] = static_cast<float>(-sigmoid(-v) / m);
    }
    if (!std::isfinite(g_loss))
      throw TrainingError("generator loss became non-finite at step " + std::to_string(step));
    nn::Tensor dimg = model.disc.backward(ds2);
    // The discriminator gradients picked up here are discarded by the next
    // opt_d.zero_grad().
    nn::Tensor dw, dwstar;
    model.gen.backward(dimg, dw, dwstar);
    model.mapping.backward(dw, dwstar);
    opt_g.step();

    if (step % tc.log_every == 0 || step == tc.steps - 1) {
      log.d_losses.emplace_back(step, d_loss);
      log.g_losses.emplace_back(step, g_loss);
    }
  }
  return log;
}

namespace {

// Small frozen conv stack whose feature distances act as the perceptual
// part of the encoder loss.
class PerceptualNet {
 public:
  explicit PerceptualNet(std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "perceptual"));
    seq_.add(std::make_unique<nn::Conv2d>("p.c1", 3, 16, 3, 2, 1, rng));
    seq_.add(std::make_unique<nn::LeakyReLU>());
    seq_.add(std::make_unique<nn::Conv2d>("p.c2", 16, 32, 3, 2, 1, rng));
    seq_.add(std::make_unique<nn::LeakyReLU>());
  }
  nn::Tensor forward(const nn::Tensor& x, bool train) { return seq_.forward(x, train); }
  nn::Tensor backward(const nn::Tensor& dy) { return seq_.backward(dy); }

 private:
  nn::Sequential seq_;
};

}  // namespace

TrainLog train_encoder(GanModel& model, Encoder& enc, const EncoderTrainConfig& tc,
                       std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "encoder-train"));
  nn::Adam opt(enc.params(), tc.lr);
  PerceptualNet pnet(seed);
  auto g_params = model.gen.params();

  const int m = tc.batch_size;
  TrainLog log;
  for (int step = 0; step < tc.steps; ++step) {
    nn::Tensor z(m, model.cfg.z_dim, 1, 1);
    rng.fill_normal(z.data, 0.f, 1.f);
    nn::Tensor w, wstar;
    model.mapping.forward(z, w, wstar, false);
    nn::Tensor x = model.gen.forward(w, wstar, false);

    opt.zero_grad();
    nn::Tensor ew, ewstar;
    enc.forward(x, ew, ewstar, true);
    nn::Tensor xhat = model.gen.forward(ew, ewstar, true);

    double pixel = 0;
    nn::Tensor dxhat(xhat.n, xhat.c, xhat.h, xhat.w);
    const double inv = 1.0 / static_cast<double>(xhat.data.size());
    for (std::size_t i = 0; i < xhat.data.size(); ++i) {
      const double diff = static_cast<double>(xhat.data[i]) - x.data[i];
      pixel += diff * diff * inv;
      dxhat.data[i] = static_cast<float>(2.0 * diff * inv);
    }

    nn::Tensor feat_t = pnet.forward(x, false);
    nn::Tensor feat = pnet.forward(xhat, true);
    double perc = 0;
    nn::Tensor dfeat(feat.n, feat.c, feat.h, feat.w);
    const double pinv = 1.0 / static_cast<double>(feat.data.size());
    for (std::size_t i = 0; i < feat.data.size(); ++i) {
      const double diff = static_cast<double>(feat.data[i]) - feat_t.data[i];
      perc += diff * diff * pinv;
      dfeat.data[i] = static_cast<float>(2.0 * diff * pinv * tc.perceptual_weight);
    }
    dxhat += pnet.backward(dfeat);

    const double loss = pixel + tc.perceptual_weight * perc;
    if (!std::isfinite(loss))
      throw TrainingError("encoder loss became non-finite at step " + std::to_string(step));

    for (auto* p : g_params) p->grad.zero();
    nn::Tensor dew, dewstar;
    model.gen.backward(dxhat, dew, dewstar);
    enc.backward(dew, dewstar);
    opt.step();

    if (step % tc.log_every == 0 || step == tc.steps - 1) log.losses.emplace_back(step, loss);
    log.final_loss = loss;
  }
  return log;
}

std::vector<Image> sample_gan(GanModel& model, int count, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "gan-sample"));
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  const int chunk = 64;
  for (int done = 0; done < count; done += chunk) {
    const int n = std::min(chunk, count - done);
    nn::Tensor z(n, model.cfg.z_dim, 1, 1);
    rng.fill_normal(z.data, 0.f, 1.f);
    nn::Tensor w, wstar;
    model.mapping.forward(z, w, wstar, false);
    nn::Tensor imgs = model.gen.forward(w, wstar, false);
    for (int i = 0; i < n; ++i) {
      Image img = tensor_to_image(imgs, i);
      for (auto& v : img.data) v = std::clamp(v, -1.f, 1.f);
      snap_u16(img);
      out.push_back(std::move(img));
    }
  }
  return out;
}

GanInversion invert_gan(Generator& gen, Encoder& enc, const std::vector<Image>& images,
                        int refine_steps, double lr) {
  if (images.empty()) throw std::invalid_argument("empty inversion batch");
  const nn::Tensor x = images_to_tensor(images);
  const int n = x.n;
  const int chw = x.chw();

  nn::Tensor ew, ewstar;
  enc.forward(x, ew, ewstar, false);

  nn::Param pw("inv.w", ew);
  nn::Param pws("inv.wstar", ewstar);
  nn::Adam opt({&pw, &pws}, lr);

  std::vector<double> best(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
  nn::Tensor best_w = ew, best_wstar = ewstar;
  nn::Tensor best_px(n, x.c, x.h, x.w);

  for (int it = 0; it <= refine_steps; ++it) {
    const bool last = it == refine_steps;
    nn::Tensor xhat = gen.forward(pw.value, pws.value, !last);

    for (int i = 0; i < n; ++i) {
      const float* a = xhat.sample(i);
      const float* b = x.sample(i);
      double acc = 0;
      for (int j = 0; j < chw; ++j) {
        const double d = static_cast<double>(a[j]) - b[j];
        acc += d * d;
      }
      acc /= chw;
      if (acc < best[static_cast<std::size_t>(i)]) {
        best[static_cast<std::size_t>(i)] = acc;
        std::copy(a, a + chw, best_px.sample(i));
        std::copy(pw.value.sample(i), pw.value.sample(i) + pw.value.chw(), best_w.sample(i));
        std::copy(pws.value.sample(i), pws.value.sample(i) + pws.value.chw(),
                  best_wstar.sample(i));
      }
    }
    if (last) break;

    nn::Tensor dxhat(xhat.n, xhat.c, xhat.h, xhat.w);
    for (std::size_t j = 0; j < xhat.data.size(); ++j)
      dxhat.data[j] = static_cast<float>(2.0 *
                                         (static_cast<double>(xhat.data[j]) - x.data[j]) / chw);
    opt.zero_grad();
    for (auto* p : gen.params()) p->grad.zero();
    nn::Tensor dw, dwstar;
    gen.backward(dxhat, dw, dwstar);
    pw.grad = dw;
    pws.grad = dwstar;
    opt.step();
  }

  GanInversion out;
  out.w = std::move(best_w);
  out.wstar = std::move(best_wstar);
  out.recon.reserve(static_cast<std::size_t>(n));
  out.mse.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Image rec = tensor_to_image(best_px, i);
    for (auto& v : rec.data) v = std::clamp(v, -1.f, 1.f);
    snap_u16(rec);
    out.mse.push_back(mse(rec, images[static_cast<std::size_t>(i)]));
    out.recon.push_back(std::move(rec));
  }
  return out;
}

std::vector<Image> reconstruct_gan_batch(Generator& gen, Encoder& enc,
                                         const std::vector<Image>& images, int refine_steps,
                                         double lr) {
  return invert_gan(gen, enc, images, refine_steps, lr).recon;
}

Image reconstruct_gan(Generator& gen, Encoder& enc, const Image& image, int refine_steps,
                      double lr) {
  return reconstruct_gan_batch(gen, enc, {image}, refine_steps, lr)[0];
}

}  // namespace recondet
