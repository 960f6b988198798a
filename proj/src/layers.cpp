#include "recondet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include <Eigen/Core>

namespace recondet::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng,
               bool zero_init)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
  Tensor w(out_ch, in_ch, ksize, ksize);
  if (!zero_init) {
    float std = std::sqrt(2.f / (static_cast<float>(in_ch) * ksize * ksize));
    rng.fill_normal(w.data, 0.f, std);
  }
  weight = Param(name + ".w", std::move(w));
  bias = Param(name + ".b", Tensor(1, out_ch, 1, 1));
}

void Conv2d::im2col(const Tensor& x, std::vector<float>& col) const {
  const int oh = out_size(x.h), ow = out_size(x.w);
  const int rows = in_ch_ * k_ * k_;
  const std::size_t cols = static_cast<std::size_t>(x.n) * oh * ow;
  col.assign(static_cast<std::size_t>(rows) * cols, 0.f);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < in_ch_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int r = (c * k_ + ky) * k_ + kx;
          float* dst = col.data() + static_cast<std::size_t>(r) * cols +
                       static_cast<std::size_t>(n) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const int sy = y * stride_ + ky - pad_;
            if (sy < 0 || sy >= x.h) {
              dst += ow;
              continue;
            }
            const float* src = &x.data[((static_cast<std::size_t>(n) * x.c + c) * x.h + sy) * x.w];
            for (int xx = 0; xx < ow; ++xx) {
              const int sx = xx * stride_ + kx - pad_;
              *dst++ = (sx >= 0 && sx < x.w) ? src[sx] : 0.f;
            }
          }
        }
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.c != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int oh = out_size(x.h), ow = out_size(x.w);
  // Eval-mode forwards use a local buffer so they never disturb the cache an
  // in-flight backward still needs.
  std::vector<float> local;
  std::vector<float>& col = train ? col_ : local;
  im2col(x, col);
  const int rows = in_ch_ * k_ * k_;
  const std::size_t cols = static_cast<std::size_t>(x.n) * oh * ow;

  std::vector<float> prod(static_cast<std::size_t>(out_ch_) * cols);
  CMapMat W(weight.value.ptr(), out_ch_, rows);
  CMapMat C(col.data(), rows, static_cast<Eigen::Index>(cols));
  MapMat Y(prod.data(), out_ch_, static_cast<Eigen::Index>(cols));
  Y.noalias() = W * C;

  // prod is laid out (out_ch, n*oh*ow); regroup sample-major into NCHW.
  Tensor out(x.n, out_ch_, oh, ow);
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int n = 0; n < x.n; ++n)
    for (int oc = 0; oc < out_ch_; ++oc) {
      const float* src = prod.data() + static_cast<std::size_t>(oc) * cols + n * plane;
      float* dst = out.sample(n) + static_cast<std::size_t>(oc) * plane;
      const float b = bias.value.data[oc];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
    }

  if (train) {
    ctx_n_ = x.n;
    ctx_h_ = x.h;
    ctx_w_ = x.w;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const int oh = out_size(ctx_h_), ow = out_size(ctx_w_);
  const int rows = in_ch_ * k_ * k_;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t cols = static_cast<std::size_t>(ctx_n_) * plane;

  // Regroup dy from NCHW to (out_ch, n*oh*ow).
  std::vector<float> dyg(static_cast<std::size_t>(out_ch_) * cols);
  for (int n = 0; n < ctx_n_; ++n)
    for (int oc = 0; oc < out_ch_; ++oc) {
      const float* src = dy.sample(n) + static_cast<std::size_t>(oc) * plane;
      float* dst = dyg.data() + static_cast<std::size_t>(oc) * cols + n * plane;
      std::copy(src, src + plane, dst);
    }

  CMapMat DY(dyg.data(), out_ch_, static_cast<Eigen::Index>(cols));
  CMapMat C(col_.data(), rows, static_cast<Eigen::Index>(cols));
  MapMat dW(weight.grad.ptr(), out_ch_, rows);
  dW.noalias() += DY * C.transpose();
  // Summed by hand: Eigen's redux peels to the vector width based on the
  // runtime address, so its result depends on where the buffer landed.
  for (int oc = 0; oc < out_ch_; ++oc) {
    const float* row = dyg.data() + static_cast<std::size_t>(oc) * cols;
    double acc = 0;
    for (std::size_t i = 0; i < cols; ++i) acc += row[i];
    bias.grad.data[oc] += static_cast<float>(acc);
  }

  std::vector<float> dcol(static_cast<std::size_t>(rows) * cols);
  MapMat DC(dcol.data(), rows, static_cast<Eigen::Index>(cols));
  CMapMat W(weight.value.ptr(), out_ch_, rows);
  DC.noalias() = W.transpose() * DY;

  // col2im: scatter-add back to input layout.
  Tensor dx(ctx_n_, in_ch_, ctx_h_, ctx_w_);
  for (int n = 0; n < ctx_n_; ++n)
    for (int c = 0; c < in_ch_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int r = (c * k_ + ky) * k_ + kx;
          const float* src = dcol.data() + static_cast<std::size_t>(r) * cols + n * plane;
          for (int y = 0; y < oh; ++y) {
            const int sy = y * stride_ + ky - pad_;
            if (sy < 0 || sy >= ctx_h_) {
              src += ow;
              continue;
            }
            float* dst =
                &dx.data[((static_cast<std::size_t>(n) * in_ch_ + c) * ctx_h_ + sy) * ctx_w_];
            for (int xx = 0; xx < ow; ++xx) {
              const int sx = xx * stride_ + kx - pad_;
              if (sx >= 0 && sx < ctx_w_) dst[sx] += *src;
              ++src;
            }
          }
        }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_dim, int out_dim, Rng& rng, bool zero_init)
    : in_dim_(in_dim), out_dim_(out_dim) {
  Tensor w(out_dim, in_dim, 1, 1);
  if (!zero_init) {
    float std = std::sqrt(2.f / static_cast<float>(in_dim));
    rng.fill_normal(w.data, 0.f, std);
  }
  weight = Param(name + ".w", std::move(w));
  bias = Param(name + ".b", Tensor(1, out_dim, 1, 1));
}

Tensor Linear::forward(const Tensor& x, bool train) {
  if (x.chw() != in_dim_) throw std::invalid_argument("Linear: dimension mismatch");
  Tensor y = Tensor::vec(x.n, out_dim_);
  CMapMat W(weight.value.ptr(), out_dim_, in_dim_);
  CMapMat X(x.ptr(), x.n, in_dim_);
  MapMat Y(y.ptr(), x.n, out_dim_);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < out_dim_; ++o) y.data[static_cast<std::size_t>(n) * out_dim_ + o] += bias.value.data[o];
  if (train) x_cache_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int n = x_cache_.n;
  CMapMat DY(dy.ptr(), n, out_dim_);
  CMapMat X(x_cache_.ptr(), n, in_dim_);
  MapMat dW(weight.grad.ptr(), out_dim_, in_dim_);
  dW.noalias() += DY.transpose() * X;
  for (int o = 0; o < out_dim_; ++o) {
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += dy.data[static_cast<std::size_t>(i) * out_dim_ + o];
    bias.grad.data[o] += static_cast<float>(acc);
  }

  Tensor dx(x_cache_.n, x_cache_.c, x_cache_.h, x_cache_.w);
  CMapMat W(weight.value.ptr(), out_dim_, in_dim_);
  MapMat DX(dx.ptr(), n, in_dim_);
  DX.noalias() = DY * W;
  return dx;
}

// ---------------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0 ? v : 0.f;
  if (train) x_cache_ = x;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (x_cache_.data[i] <= 0) dx.data[i] = 0.f;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0 ? v : slope_ * v;
  if (train) x_cache_ = x;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (x_cache_.data[i] <= 0) dx.data[i] *= slope_;
  return dx;
}

Tensor SiLU::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& v : y.data) {
    float s = 1.f / (1.f + std::exp(-v));
    v = v * s;
  }
  if (train) x_cache_ = x;
  return y;
}

Tensor SiLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    float x = x_cache_.data[i];
    float s = 1.f / (1.f + std::exp(-x));
    dx.data[i] *= s * (1.f + x * (1.f - s));
  }
  return dx;
}

Tensor Tanh::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& v : y.data) v = std::tanh(v);
  if (train) y_cache_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    float y = y_cache_.data[i];
    dx.data[i] *= (1.f - y * y);
  }
  return dx;
}

// ---------------------------------------------------------------- GroupNorm

GroupNorm::GroupNorm(std::string name, int channels, int groups, float eps)
    : channels_(channels), groups_(groups), eps_(eps) {
  if (channels % groups != 0) throw std::invalid_argument("GroupNorm: channels % groups != 0");
  Tensor g(1, channels, 1, 1);
  g.fill(1.f);
  gamma = Param(name + ".g", std::move(g));
  beta = Param(name + ".b", Tensor(1, channels, 1, 1));
}

Tensor GroupNorm::forward(const Tensor& x, bool train) {
  if (x.c != channels_) throw std::invalid_argument("GroupNorm: channel mismatch");
  const int cg = channels_ / groups_;
  const std::size_t m = static_cast<std::size_t>(cg) * x.h * x.w;
  Tensor xhat(x.n, x.c, x.h, x.w);
  std::vector<float> inv_std(static_cast<std::size_t>(x.n) * groups_, 0.f);

  for (int n = 0; n < x.n; ++n)
    for (int g = 0; g < groups_; ++g) {
      const float* src = x.sample(n) + static_cast<std::size_t>(g) * m;
      double mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) {
        double d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      float is = static_cast<float>(1.0 / std::sqrt(var + eps_));
      inv_std[static_cast<std::size_t>(n) * groups_ + g] = is;
      float* dst = xhat.sample(n) + static_cast<std::size_t>(g) * m;
      for (std::size_t i = 0; i < m; ++i)
        dst[i] = (src[i] - static_cast<float>(mean)) * is;
    }

  Tensor y(x.n, x.c, x.h, x.w);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const float* src = xhat.sample(n) + c * plane;
      float* dst = y.sample(n) + c * plane;
      const float gm = gamma.value.data[c], bt = beta.value.data[c];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = gm * src[i] + bt;
    }
  if (train) {
    xhat_cache_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor GroupNorm::backward(const Tensor& dy) {
  const Tensor& xhat = xhat_cache_;
  const int cg = channels_ / groups_;
  const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
  const std::size_t m = static_cast<std::size_t>(cg) * plane;

  for (int c = 0; c < channels_; ++c) {
    double dg = 0, db = 0;
    for (int n = 0; n < dy.n; ++n) {
      const float* dsrc = dy.sample(n) + c * plane;
      const float* xsrc = xhat.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dg += static_cast<double>(dsrc[i]) * xsrc[i];
        db += dsrc[i];
      }
    }
    gamma.grad.data[c] += static_cast<float>(dg);
    beta.grad.data[c] += static_cast<float>(db);
  }

  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  for (int n = 0; n < dy.n; ++n)
    for (int g = 0; g < groups_; ++g) {
      const float is = inv_std_[static_cast<std::size_t>(n) * groups_ + g];
      // dxhat = dy * gamma over the group's channels
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int cc = 0; cc < cg; ++cc) {
        const int c = g * cg + cc;
        const float gm = gamma.value.data[c];
        const float* dsrc = dy.sample(n) + c * plane;
        const float* xsrc = xhat.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double dxh = static_cast<double>(dsrc[i]) * gm;
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xsrc[i];
        }
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int cc = 0; cc < cg; ++cc) {
        const int c = g * cg + cc;
        const float gm = gamma.value.data[c];
        const float* dsrc = dy.sample(n) + c * plane;
        const float* xsrc = xhat.sample(n) + c * plane;
        float* dst = dx.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          double dxh = static_cast<double>(dsrc[i]) * gm;
          dst[i] = static_cast<float>(
              is * (dxh - inv_m * sum_dxhat - xsrc[i] * inv_m * sum_dxhat_xhat));
        }
      }
    }
  return dx;
}

// ---------------------------------------------------------------- AdaIN

Tensor AdaIN::forward(const Tensor& x, const Tensor& scale, const Tensor& bias, bool train) {
  if (scale.n != x.n || scale.chw() != x.c || bias.n != x.n || bias.chw() != x.c)
    throw std::invalid_argument("AdaIN: style shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  Tensor xhat(x.n, x.c, x.h, x.w);
  Tensor y(x.n, x.c, x.h, x.w);
  std::vector<float> inv_std(static_cast<std::size_t>(x.n) * x.c, 0.f);

  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.sample(n) + c * plane;
      double mean = 0;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      mean /= static_cast<double>(plane);
      double var = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        double d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      float is = static_cast<float>(1.0 / std::sqrt(var + eps_));
      inv_std[static_cast<std::size_t>(n) * x.c + c] = is;
      const float s = scale.data[static_cast<std::size_t>(n) * x.c + c];
      const float b = bias.data[static_cast<std::size_t>(n) * x.c + c];
      float* xh = xhat.sample(n) + c * plane;
      float* dst = y.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - static_cast<float>(mean)) * is;
        dst[i] = s * xh[i] + b;
      }
    }
  if (train) {
    xhat_cache_ = std::move(xhat);
    scale_cache_ = scale;
    inv_std_ = std::move(inv_std);
  }
  return y;
}

Tensor AdaIN::backward(const Tensor& dy, Tensor& d_scale, Tensor& d_bias) {
  const Tensor& xhat = xhat_cache_;
  const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
  d_scale = Tensor::vec(dy.n, dy.c);
  d_bias = Tensor::vec(dy.n, dy.c);
  Tensor dx(dy.n, dy.c, dy.h, dy.w);

  for (int n = 0; n < dy.n; ++n)
    for (int c = 0; c < dy.c; ++c) {
      const float* dsrc = dy.sample(n) + c * plane;
      const float* xsrc = xhat.sample(n) + c * plane;
      const float s = scale_cache_.data[static_cast<std::size_t>(n) * dy.c + c];
      const float is = inv_std_[static_cast<std::size_t>(n) * dy.c + c];
      double ds = 0, db = 0, sum_dxh = 0, sum_dxh_xh = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        ds += static_cast<double>(dsrc[i]) * xsrc[i];
        db += dsrc[i];
        double dxh = static_cast<double>(dsrc[i]) * s;
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xsrc[i];
      }
      d_scale.data[static_cast<std::size_t>(n) * dy.c + c] = static_cast<float>(ds);
      d_bias.data[static_cast<std::size_t>(n) * dy.c + c] = static_cast<float>(db);
      const double inv_m = 1.0 / static_cast<double>(plane);
      float* dst = dx.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double dxh = static_cast<double>(dsrc[i]) * s;
        dst[i] = static_cast<float>(is * (dxh - inv_m * sum_dxh - xsrc[i] * inv_m * sum_dxh_xh));
      }
    }
  return dx;
}

// ---------------------------------------------------------------- pooling / resampling

Tensor UpsampleNearest2x::forward(const Tensor& x, bool) {
  Tensor y(x.n, x.c, x.h * 2, x.w * 2);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx)
          y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
  return y;
}

Tensor UpsampleNearest2x::backward(const Tensor& dy) {
  Tensor dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int n = 0; n < dy.n; ++n)
    for (int c = 0; c < dy.c; ++c)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx)
          dx.at(n, c, yy / 2, xx / 2) += dy.at(n, c, yy, xx);
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool train) {
  Tensor y = Tensor::vec(x.n, x.c);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.sample(n) + c * plane;
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      y.data[static_cast<std::size_t>(n) * x.c + c] =
          static_cast<float>(acc / static_cast<double>(plane));
    }
  if (train) {
    ctx_h_ = x.h;
    ctx_w_ = x.w;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(dy.n, dy.c, ctx_h_, ctx_w_);
  const std::size_t plane = static_cast<std::size_t>(ctx_h_) * ctx_w_;
  const float inv = 1.f / static_cast<float>(plane);
  for (int n = 0; n < dy.n; ++n)
    for (int c = 0; c < dy.c; ++c) {
      const float g = dy.data[static_cast<std::size_t>(n) * dy.c + c] * inv;
      float* dst = dx.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
    }
  return dx;
}

// ---------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train);
  return cur;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor cur = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect(out);
}

// ---------------------------------------------------------------- misc

Tensor sinusoidal_embedding(const std::vector<int>& t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
  const int half = dim / 2;
  Tensor e = Tensor::vec(static_cast<int>(t.size()), dim);
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / (half - 1 > 0 ? half - 1 : 1));
      double a = t[n] * freq;
      e.data[n * dim + i] = static_cast<float>(std::sin(a));
      e.data[n * dim + half + i] = static_cast<float>(std::cos(a));
    }
  }
  return e;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  const std::size_t pa = static_cast<std::size_t>(a.c) * a.h * a.w;
  const std::size_t pb = static_cast<std::size_t>(b.c) * b.h * b.w;
  for (int n = 0; n < a.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + pa, y.sample(n));
    std::copy(b.sample(n), b.sample(n) + pb, y.sample(n) + pa);
  }
  return y;
}

void split_channels(const Tensor& d, int c_first, Tensor& da, Tensor& db) {
  da = Tensor(d.n, c_first, d.h, d.w);
  db = Tensor(d.n, d.c - c_first, d.h, d.w);
  const std::size_t pa = static_cast<std::size_t>(c_first) * d.h * d.w;
  const std::size_t pb = static_cast<std::size_t>(d.c - c_first) * d.h * d.w;
  for (int n = 0; n < d.n; ++n) {
    std::copy(d.sample(n), d.sample(n) + pa, da.sample(n));
    std::copy(d.sample(n) + pa, d.sample(n) + pa + pb, db.sample(n));
  }
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->value.size(), 0.f);
    v_[i].assign(params_[i]->value.size(), 0.f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const float g = p.grad.data[j];
      m_[i][j] = static_cast<float>(beta1_ * m_[i][j] + (1.0 - beta1_) * g);
      v_[i][j] = static_cast<float>(beta2_ * v_[i][j] + (1.0 - beta2_) * g * g);
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.value.data[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->grad.zero();
}

bool all_finite(const Tensor& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace recondet::nn
