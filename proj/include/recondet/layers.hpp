#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "recondet/rng.hpp"
#include "recondet/tensor.hpp"

namespace recondet::nn {

// A named learnable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.n, value.c, value.h, value.w);
  }
};

// Layers cache whatever they need during forward(train=true) and consume the
// cache in backward. A layer instance therefore processes one batch at a time.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>& out) { (void)out; }
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng,
         bool zero_init = false);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  Param weight;  // (out_ch, in_ch, k, k)
  Param bias;    // (out_ch)

 private:
  void im2col(const Tensor& x, std::vector<float>& col) const;

  int in_ch_, out_ch_, k_, stride_, pad_;
  std::vector<float> col_;  // (in_ch*k*k) x (n*oh*ow), row-major
  int ctx_n_ = 0, ctx_h_ = 0, ctx_w_ = 0;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_dim, int out_dim, Rng& rng, bool zero_init = false);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param weight;  // (out_dim, in_dim)
  Param bias;    // (out_dim)

 private:
  int in_dim_, out_dim_;
  Tensor x_cache_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_cache_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

 private:
  float slope_;
  Tensor x_cache_;
};

class SiLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_cache_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor y_cache_;
};

class GroupNorm : public Layer {
 public:
  GroupNorm(std::string name, int channels, int groups, float eps = 1e-5f);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Param gamma, beta;

 private:
  int channels_, groups_;
  float eps_;
  Tensor xhat_cache_;
  std::vector<float> inv_std_;  // per (n, group)
};

// Per-sample, per-channel instance normalization followed by an externally
// supplied scale and bias (the style path of the generator). Not a Layer:
// the scale/bias are inputs with their own gradients.
class AdaIN {
 public:
  explicit AdaIN(float eps = 1e-5f) : eps_(eps) {}

  // scale and bias are (n, c) vectors.
  Tensor forward(const Tensor& x, const Tensor& scale, const Tensor& bias, bool train);
  // Returns dx; writes d_scale and d_bias.
  Tensor backward(const Tensor& dy, Tensor& d_scale, Tensor& d_bias);

 private:
  float eps_;
  Tensor xhat_cache_, scale_cache_;
  std::vector<float> inv_std_;
};

class UpsampleNearest2x : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int ctx_h_ = 0, ctx_w_ = 0;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect(std::vector<Param*>& out) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Sinusoidal position embedding of integer timesteps, dimension must be even.
Tensor sinusoidal_embedding(const std::vector<int>& t, int dim);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int c_first, Tensor& da, Tensor& db);

class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

bool all_finite(const Tensor& t);

}  // namespace recondet::nn

namespace recondet {

// (step, loss) samples from a training run plus the last loss seen.
struct TrainLog {
  std::vector<std::pair<int, double>> losses;
  double final_loss = 0.0;
};

}  // namespace recondet
