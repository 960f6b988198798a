#pragma once

#include <memory>
#include <string>
#include <vector>

#include "recondet/checkpoint.hpp"
#include "recondet/image.hpp"
#include "recondet/layers.hpp"
#include "recondet/rng.hpp"
#include "recondet/schedule.hpp"

namespace recondet {

struct DenoiserConfig {
  int image_size = 32;
  int base_channels = 24;  // must be divisible by 8
  int temb_dim = 64;
  int temb_hidden = 128;
};

namespace detail {

// Pre-activation residual block with a per-channel time bias injected
// between the two convolutions. The second conv starts at zero so a fresh
// block is the identity plus skip projection.
class ResBlock {
 public:
  ResBlock(const std::string& name, int cin, int cout, int temb_dim, Rng& rng);

  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& temb, bool train);
  // Returns dx and accumulates the time-path gradient into dtemb.
  nn::Tensor backward(const nn::Tensor& dy, nn::Tensor& dtemb);
  void collect(std::vector<nn::Param*>& out);

 private:
  int cin_, cout_;
  nn::GroupNorm gn1_, gn2_;
  nn::SiLU act1_, act2_, tact_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear tproj_;
  std::unique_ptr<nn::Conv2d> skip_;
};

}  // namespace detail

// Noise prediction U-net over 3-channel square images at three resolutions.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

  // Predicts the noise content of x at integer timesteps t (one per sample).
  nn::Tensor predict(const nn::Tensor& x, const std::vector<int>& t, bool train = false);
  // Backpropagates dL/dprediction; returns dL/dx and accumulates parameter
  // gradients.
  nn::Tensor backward(const nn::Tensor& dpred);

  std::vector<nn::Param*> params();
  const DenoiserConfig& config() const { return cfg_; }

  void save(const std::string& path, const DiffusionSchedule& sched, std::uint64_t seed);
  static Denoiser load(const std::string& path, DiffusionSchedule* sched = nullptr);

 private:
  Denoiser(const DenoiserConfig& cfg, Rng rng);

  DenoiserConfig cfg_;
  nn::Linear tfc1_, tfc2_;
  nn::SiLU tact_;
  nn::Conv2d stem_;
  detail::ResBlock rb1_;
  nn::Conv2d down1_;
  detail::ResBlock rb2_;
  nn::Conv2d down2_;
  detail::ResBlock rb3_;
  nn::UpsampleNearest2x up1_;
  detail::ResBlock rb4_;
  nn::UpsampleNearest2x up2_;
  detail::ResBlock rb5_;
  nn::GroupNorm out_gn_;
  nn::SiLU out_act_;
  nn::Conv2d out_conv_;
  int c1_dim_ = 0, c2_dim_ = 0;  // concat split points cached for backward
};

struct DenoiserTrainConfig {
  int steps = 1500;
  int batch_size = 32;
  double lr = 2e-4;
  int log_every = 50;
};

TrainLog train_denoiser(Denoiser& den, const std::vector<Image>& images,
                        const DiffusionSchedule& sched, const DenoiserTrainConfig& tc,
                        std::uint64_t seed);

nn::Tensor image_to_tensor(const Image& img);
nn::Tensor images_to_tensor(const std::vector<Image>& imgs);
Image tensor_to_image(const nn::Tensor& t, int sample);

// Runs the S-step inversion 0 -> tau_1 -> ... -> tau_S and the matching
// reversal back to 0, with the noise estimate re-evaluated at the source of
// every step. Outputs are clipped and snapped to the 16-bit grid.
std::vector<Image> reconstruct_dm_batch(Denoiser& den, const DiffusionSchedule& sched,
                                        const std::vector<Image>& images, int S);
Image reconstruct_dm(Denoiser& den, const DiffusionSchedule& sched, const Image& image, int S);

// Draws fresh samples by reversing the S-step grid from seeded noise.
std::vector<Image> sample_dm(Denoiser& den, const DiffusionSchedule& sched, int count, int S,
                             std::uint64_t seed);

}  // namespace recondet
