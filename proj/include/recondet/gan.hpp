#pragma once

#include <memory>
#include <string>
#include <vector>

#include "recondet/checkpoint.hpp"
#include "recondet/image.hpp"
#include "recondet/layers.hpp"
#include "recondet/rng.hpp"

namespace recondet {

struct GanConfig {
  int image_size = 32;                        // 4 * 2^(num_layers-1)
  int z_dim = 64;                             // sampling noise
  int w_dim = 64;                             // per-layer style width
  int num_layers = 4;                         // style layers
  int wstar_dim = 64;                         // constant-path latent width
  std::vector<int> channels = {96, 64, 48, 32};  // one entry per layer

  int latent_dim() const { return num_layers * w_dim + wstar_dim; }
  void validate() const;
};

// z -> (w, w*). Trained jointly with the generator; inversion skips it and
// works directly in (w, w*) space.
class MappingNet {
 public:
  MappingNet(const GanConfig& cfg, std::uint64_t seed);

  void forward(const nn::Tensor& z, nn::Tensor& w, nn::Tensor& wstar, bool train);
  void backward(const nn::Tensor& dw, const nn::Tensor& dwstar);
  std::vector<nn::Param*> params();

 private:
  MappingNet(const GanConfig& cfg, Rng rng);

  GanConfig cfg_;
  nn::Linear fc1_, fc2_;
  nn::LeakyReLU act_;
};

namespace detail {

struct StyleBlock {
  std::unique_ptr<nn::UpsampleNearest2x> up;  // null on the first block
  std::unique_ptr<nn::Conv2d> conv;
  std::unique_ptr<nn::Linear> affine;  // w_l -> (scale, bias)
  nn::AdaIN adain;
  nn::LeakyReLU lrelu{0.2f};
  nn::Tensor style_cache;  // w_l slice kept for backward
};

}  // namespace detail

// Style-based synthesis network: a learned 4x4 constant shifted by a
// projection of w*, then per-layer conv + AdaIN styling from w slices.
class Generator {
 public:
  Generator(const GanConfig& cfg, std::uint64_t seed);

  // w is (n, num_layers * w_dim), wstar is (n, wstar_dim).
  nn::Tensor forward(const nn::Tensor& w, const nn::Tensor& wstar, bool train);
  // Propagates image gradients back to both latents; parameter gradients
  // accumulate as usual.
  void backward(const nn::Tensor& dimg, nn::Tensor& dw, nn::Tensor& dwstar);
  std::vector<nn::Param*> params();
  const GanConfig& config() const { return cfg_; }

 private:
  Generator(const GanConfig& cfg, Rng rng);

  GanConfig cfg_;
  nn::Param const_;
  nn::Linear wstar_fc_;
  std::vector<detail::StyleBlock> blocks_;
  nn::Conv2d to_rgb_;
  nn::Tanh tanh_;
};

class Discriminator {
 public:
  Discriminator(const GanConfig& cfg, std::uint64_t seed);

  nn::Tensor forward(const nn::Tensor& x, bool train);  // (n, 1) scores
  nn::Tensor backward(const nn::Tensor& dscore);
  std::vector<nn::Param*> params();

 private:
  nn::Sequential seq_;
};

// Image -> (w, w*) initializer for inversion.
class Encoder {
 public:
  Encoder(const GanConfig& cfg, std::uint64_t seed);

  void forward(const nn::Tensor& x, nn::Tensor& w, nn::Tensor& wstar, bool train);
  void backward(const nn::Tensor& dw, const nn::Tensor& dwstar);
  std::vector<nn::Param*> params();

  void save(const std::string& path, const GanConfig& cfg, std::uint64_t seed);
  static Encoder load(const std::string& path, GanConfig* cfg_out = nullptr);

 private:
  Encoder(const GanConfig& cfg, Rng rng);

  GanConfig cfg_;
  nn::Sequential trunk_;
  nn::Linear head_w_, head_wstar_;
};

struct GanModel {
  GanModel(const GanConfig& cfg, std::uint64_t seed);

  GanConfig cfg;
  MappingNet mapping;
  Generator gen;
  Discriminator disc;

  void save(const std::string& path, std::uint64_t seed);
  static GanModel load(const std::string& path);
};

struct GanTrainConfig {
  int steps = 3000;
  int batch_size = 16;
  double lr = 2e-4;
  double fd_gamma = 5.0;   // weight of the slope penalty on real scores
  double fd_h = 0.05;      // probe distance for the finite-difference slope
  int log_every = 50;
};

struct GanTrainLog {
  std::vector<std::pair<int, double>> d_losses;
  std::vector<std::pair<int, double>> g_losses;
};

GanTrainLog train_gan(GanModel& model, const std::vector<Image>& images,
                      const GanTrainConfig& tc, std::uint64_t seed);

struct EncoderTrainConfig {
  int steps = 1200;
  int batch_size = 16;
  double lr = 1e-3;
  double perceptual_weight = 0.1;
  int log_every = 50;
};

TrainLog train_encoder(GanModel& model, Encoder& enc, const EncoderTrainConfig& tc,
                       std::uint64_t seed);

std::vector<Image> sample_gan(GanModel& model, int count, std::uint64_t seed);

struct GanInversion {
  nn::Tensor w, wstar;          // best latents per sample
  std::vector<Image> recon;     // clipped, grid-snapped reconstructions
  std::vector<double> mse;      // against the input, after snapping
};

// Encoder initialization followed by Adam refinement in latent space. The
// best iterate per sample wins, the initial guess included.
GanInversion invert_gan(Generator& gen, Encoder& enc, const std::vector<Image>& images,
                        int refine_steps, double lr);

std::vector<Image> reconstruct_gan_batch(Generator& gen, Encoder& enc,
                                         const std::vector<Image>& images, int refine_steps,
                                         double lr);
Image reconstruct_gan(Generator& gen, Encoder& enc, const Image& image, int refine_steps,
                      double lr);

}  // namespace recondet
