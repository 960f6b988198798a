#include "recondet/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "recondet/common.hpp"
#include "recondet/ddim.hpp"

namespace recondet {

namespace detail {

ResBlock::ResBlock(const std::string& name, int cin, int cout, int temb_dim, Rng& rng)
    : cin_(cin),
      cout_(cout),
      gn1_(name + ".gn1", cin, 8),
      gn2_(name + ".gn2", cout, 8),
      conv1_(name + ".conv1", cin, cout, 3, 1, 1, rng),
      conv2_(name + ".conv2", cout, cout, 3, 1, 1, rng, true),
      tproj_(name + ".tproj", temb_dim, cout, rng) {
  if (cin != cout) skip_ = std::make_unique<nn::Conv2d>(name + ".skip", cin, cout, 1, 1, 0, rng);
}

nn::Tensor ResBlock::forward(const nn::Tensor& x, const nn::Tensor& temb, bool train) {
  nn::Tensor h = conv1_.forward(act1_.forward(gn1_.forward(x, train), train), train);
  nn::Tensor tb = tproj_.forward(tact_.forward(temb, train), train);  // (n, cout)
  const std::size_t plane = static_cast<std::size_t>(h.h) * h.w;
  for (int n = 0; n < h.n; ++n)
    for (int c = 0; c < h.c; ++c) {
      const float b = tb.data[static_cast<std::size_t>(n) * h.c + c];
      float* p = h.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  h = conv2_.forward(act2_.forward(gn2_.forward(h, train), train), train);
  nn::Tensor s = skip_ ? skip_->forward(x, train) : x;
  h += s;
  return h;
}

nn::Tensor ResBlock::backward(const nn::Tensor& dy, nn::Tensor& dtemb) {
  nn::Tensor dh = gn2_.backward(act2_.backward(conv2_.backward(dy)));

  // The time bias enters as a per (sample, channel) constant over space.
  nn::Tensor dtb = nn::Tensor::vec(dh.n, dh.c);
  const std::size_t plane = static_cast<std::size_t>(dh.h) * dh.w;
  for (int n = 0; n < dh.n; ++n)
    for (int c = 0; c < dh.c; ++c) {
      const float* p = dh.sample(n) + c * plane;
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      dtb.data[static_cast<std::size_t>(n) * dh.c + c] = static_cast<float>(acc);
    }
  dtemb += tact_.backward(tproj_.backward(dtb));

  nn::Tensor dx = gn1_.backward(act1_.backward(conv1_.backward(dh)));
  dx += skip_ ? skip_->backward(dy) : dy;
  return dx;
}

void ResBlock::collect(std::vector<nn::Param*>& out) {
  gn1_.collect(out);
  conv1_.collect(out);
  tproj_.collect(out);
  gn2_.collect(out);
  conv2_.collect(out);
  if (skip_) skip_->collect(out);
}

}  // namespace detail

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed)
    : Denoiser(cfg, Rng(Rng::derive(seed, "denoiser-init"))) {}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng rng)
    : cfg_(cfg),
      tfc1_("t.fc1", cfg.temb_dim, cfg.temb_hidden, rng),
      tfc2_("t.fc2", cfg.temb_hidden, cfg.temb_hidden, rng),
      stem_("stem", 3, cfg.base_channels, 3, 1, 1, rng),
      rb1_("rb1", cfg.base_channels, cfg.base_channels, cfg.temb_hidden, rng),
      down1_("down1", cfg.base_channels, 2 * cfg.base_channels, 3, 2, 1, rng),
      rb2_("rb2", 2 * cfg.base_channels, 2 * cfg.base_channels, cfg.temb_hidden, rng),
      down2_("down2", 2 * cfg.base_channels, 4 * cfg.base_channels, 3, 2, 1, rng),
      rb3_("rb3", 4 * cfg.base_channels, 4 * cfg.base_channels, cfg.temb_hidden, rng),
      rb4_("rb4", 6 * cfg.base_channels, 2 * cfg.base_channels, cfg.temb_hidden, rng),
      rb5_("rb5", 3 * cfg.base_channels, cfg.base_channels, cfg.temb_hidden, rng),
      out_gn_("out.gn", cfg.base_channels, 8),
      out_conv_("out.conv", cfg.base_channels, 3, 3, 1, 1, rng, true) {
  if (cfg.base_channels % 8 != 0)
    throw std::invalid_argument("base_channels must be divisible by 8");
  if (cfg.image_size % 4 != 0)
    throw std::invalid_argument("image_size must be divisible by 4");
  if (cfg.temb_dim % 2 != 0) throw std::invalid_argument("temb_dim must be even");
}

nn::Tensor Denoiser::predict(const nn::Tensor& x, const std::vector<int>& t, bool train) {
  if (x.c != 3 || x.h != cfg_.image_size || x.w != cfg_.image_size)
    throw std::invalid_argument("denoiser input must be 3-channel at the configured size");
  if (static_cast<int>(t.size()) != x.n)
    throw std::invalid_argument("one timestep per sample required");

  nn::Tensor te = nn::sinusoidal_embedding(t, cfg_.temb_dim);
  te = tfc2_.forward(tact_.forward(tfc1_.forward(te, train), train), train);

  nn::Tensor h1 = rb1_.forward(stem_.forward(x, train), te, train);
  nn::Tensor h2 = rb2_.forward(down1_.forward(h1, train), te, train);
  nn::Tensor h3 = rb3_.forward(down2_.forward(h2, train), te, train);
  nn::Tensor c1 = nn::concat_channels(up1_.forward(h3, train), h2);
  c1_dim_ = h3.c;
  nn::Tensor h4 = rb4_.forward(c1, te, train);
  nn::Tensor c2 = nn::concat_channels(up2_.forward(h4, train), h1);
  c2_dim_ = h4.c;
  nn::Tensor h5 = rb5_.forward(c2, te, train);
  return out_conv_.forward(out_act_.forward(out_gn_.forward(h5, train), train), train);
}

nn::Tensor Denoiser::backward(const nn::Tensor& dpred) {
  nn::Tensor dte = nn::Tensor::vec(dpred.n, cfg_.temb_hidden);

  nn::Tensor dh5 = out_gn_.backward(out_act_.backward(out_conv_.backward(dpred)));
  nn::Tensor dc2 = rb5_.backward(dh5, dte);
  nn::Tensor du2, dh1;
  nn::split_channels(dc2, c2_dim_, du2, dh1);
  nn::Tensor dh4 = up2_.backward(du2);
  nn::Tensor dc1 = rb4_.backward(dh4, dte);
  nn::Tensor du1, dh2;
  nn::split_channels(dc1, c1_dim_, du1, dh2);
  nn::Tensor dh3 = up1_.backward(du1);
  dh2 += down2_.backward(rb3_.backward(dh3, dte));
  dh1 += down1_.backward(rb2_.backward(dh2, dte));
  nn::Tensor dx = stem_.backward(rb1_.backward(dh1, dte));

  tfc1_.backward(tact_.backward(tfc2_.backward(dte)));
  return dx;
}

std::vector<nn::Param*> Denoiser::params() {
  std::vector<nn::Param*> out;
  tfc1_.collect(out);
  tfc2_.collect(out);
  stem_.collect(out);
  rb1_.collect(out);
  down1_.collect(out);
  rb2_.collect(out);
  down2_.collect(out);
  rb3_.collect(out);
  rb4_.collect(out);
  rb5_.collect(out);
  out_gn_.collect(out);
  out_conv_.collect(out);
  return out;
}

void Denoiser::save(const std::string& path, const DiffusionSchedule& sched,
                    std::uint64_t seed) {
  Checkpoint ck;
  ck.kind = "denoiser";
  ck.meta = {
      {"image_size", cfg_.image_size},
      {"base_channels", cfg_.base_channels},
      {"temb_dim", cfg_.temb_dim},
      {"temb_hidden", cfg_.temb_hidden},
      {"schedule",
       {{"T", sched.T}, {"beta_start", sched.beta_start}, {"beta_end", sched.beta_end}}},
      {"seed", seed},
  };
  put_params(ck, params());
  ck.save(path);
  write_digest_sidecar(path);
}

Denoiser Denoiser::load(const std::string& path, DiffusionSchedule* sched) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "denoiser")
    throw DependencyError("expected a denoiser checkpoint at " + path);
  DenoiserConfig cfg;
  cfg.image_size = ck.meta.at("image_size").get<int>();
  cfg.base_channels = ck.meta.at("base_channels").get<int>();
  cfg.temb_dim = ck.meta.at("temb_dim").get<int>();
  cfg.temb_hidden = ck.meta.at("temb_hidden").get<int>();
  Denoiser den(cfg, 0);
  load_params(ck, den.params());
  if (sched) {
    const auto& s = ck.meta.at("schedule");
    *sched = DiffusionSchedule::linear(s.at("T").get<int>(), s.at("beta_start").get<double>(),
                                       s.at("beta_end").get<double>());
  }
  return den;
}

TrainLog train_denoiser(Denoiser& den, const std::vector<Image>& images,
                        const DiffusionSchedule& sched, const DenoiserTrainConfig& tc,
                        std::uint64_t seed) {
  if (images.empty()) throw TrainingError("denoiser training needs at least one image");
  Rng rng(Rng::derive(seed, "denoiser-train"));
  nn::Adam opt(den.params(), tc.lr);

  const int size = den.config().image_size;
  TrainLog log;
  for (int step = 0; step < tc.steps; ++step) {
    nn::Tensor x0(tc.batch_size, 3, size, size);
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(images.size()) - 1);
      const Image& img = images[static_cast<std::size_t>(pick)];
      if (img.height != size || img.width != size)
        throw TrainingError("training image size mismatch");
      std::copy(img.data.begin(), img.data.end(), x0.sample(b));
    }
    std::vector<int> t(static_cast<std::size_t>(tc.batch_size));
    for (auto& tt : t) tt = static_cast<int>(rng.uniform_int(1, sched.T));

    nn::Tensor eps(tc.batch_size, 3, size, size);
    rng.fill_normal(eps.data, 0.f, 1.f);
    nn::Tensor xt(tc.batch_size, 3, size, size);
    const std::size_t chw = static_cast<std::size_t>(x0.chw());
    for (int b = 0; b < tc.batch_size; ++b) {
      const double abar = sched.abar(t[static_cast<std::size_t>(b)]);
      const float* p0 = x0.sample(b);
      const float* pe = eps.sample(b);
      float* pt = xt.sample(b);
      for (std::size_t i = 0; i < chw; ++i)
        pt[i] = static_cast<float>(forward_diffuse(p0[i], pe[i], abar));
    }

    opt.zero_grad();
    nn::Tensor pred = den.predict(xt, t, true);
    double loss = 0;
    nn::Tensor dpred(pred.n, pred.c, pred.h, pred.w);
    const double inv = 1.0 / static_cast<double>(pred.data.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const double d = static_cast<double>(pred.data[i]) - eps.data[i];
      loss += d * d * inv;
      dpred.data[i] = static_cast<float>(2.0 * d * inv);
    }
    if (!std::isfinite(loss))
      throw TrainingError("denoiser loss became non-finite at step " + std::to_string(step));
    den.backward(dpred);
    opt.step();

    if (step % tc.log_every == 0 || step == tc.steps - 1)
      log.losses.emplace_back(step, loss);
    log.final_loss = loss;
  }
  return log;
}

nn::Tensor image_to_tensor(const Image& img) {
  nn::Tensor t(1, 3, img.height, img.width);
  std::copy(img.data.begin(), img.data.end(), t.data.begin());
  return t;
}

nn::Tensor images_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("empty image batch");
  nn::Tensor t(static_cast<int>(imgs.size()), 3, imgs[0].height, imgs[0].width);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i].height != imgs[0].height || imgs[i].width != imgs[0].width)
      throw std::invalid_argument("image batch sizes differ");
    std::copy(imgs[i].data.begin(), imgs[i].data.end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

Image tensor_to_image(const nn::Tensor& t, int sample) {
  if (t.c != 3) throw std::invalid_argument("tensor_to_image expects 3 channels");
  Image img(t.h, t.w);
  const float* p = t.sample(sample);
  std::copy(p, p + t.chw(), img.data.begin());
  return img;
}

namespace {

// Walks the grid 0, tau_1, ..., tau_S and back. The model is always queried
// at the level the state currently sits at.
nn::Tensor ddim_round_trip(Denoiser& den, const DiffusionSchedule& sched, nn::Tensor x,
                           const std::vector<int>& taus) {
  std::vector<int> grid;
  grid.reserve(taus.size() + 1);
  grid.push_back(0);
  grid.insert(grid.end(), taus.begin(), taus.end());

  const int n = x.n;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    std::vector<int> t(static_cast<std::size_t>(n), grid[i]);
    nn::Tensor eps = den.predict(x, t, false);
    x = ddim_transport_batch(x, eps, sched.abar(grid[i]), sched.abar(grid[i + 1]));
  }
  for (std::size_t i = grid.size() - 1; i > 0; --i) {
    std::vector<int> t(static_cast<std::size_t>(n), grid[i]);
    nn::Tensor eps = den.predict(x, t, false);
    x = ddim_transport_batch(x, eps, sched.abar(grid[i]), sched.abar(grid[i - 1]));
  }
  return x;
}

Image finalize_recon(const nn::Tensor& t, int sample) {
  Image img = tensor_to_image(t, sample);
  for (auto& v : img.data) v = std::clamp(v, -1.f, 1.f);
  snap_u16(img);
  return img;
}

}  // namespace

std::vector<Image> reconstruct_dm_batch(Denoiser& den, const DiffusionSchedule& sched,
                                        const std::vector<Image>& images, int S) {
  const auto taus = sched.subset(S);
  nn::Tensor x = images_to_tensor(images);
  x = ddim_round_trip(den, sched, std::move(x), taus);
  std::vector<Image> out;
  out.reserve(images.size());
  for (int i = 0; i < x.n; ++i) out.push_back(finalize_recon(x, i));
  return out;
}

Image reconstruct_dm(Denoiser& den, const DiffusionSchedule& sched, const Image& image, int S) {
  return reconstruct_dm_batch(den, sched, {image}, S)[0];
}

std::vector<Image> sample_dm(Denoiser& den, const DiffusionSchedule& sched, int count, int S,
                             std::uint64_t seed) {
  const auto taus = sched.subset(S);
  Rng rng(Rng::derive(seed, "dm-sample"));
  const int size = den.config().image_size;
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));

  const int chunk = 32;
  for (int done = 0; done < count; done += chunk) {
    const int n = std::min(chunk, count - done);
    nn::Tensor x(n, 3, size, size);
    rng.fill_normal(x.data, 0.f, 1.f);
    std::vector<int> grid(taus.rbegin(), taus.rend());
    grid.push_back(0);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      std::vector<int> t(static_cast<std::size_t>(n), grid[i]);
      nn::Tensor eps = den.predict(x, t, false);
      x = ddim_transport_batch(x, eps, sched.abar(grid[i]), sched.abar(grid[i + 1]));
    }
    for (int i = 0; i < n; ++i) out.push_back(finalize_recon(x, i));
  }
  return out;
}

}  // namespace recondet
