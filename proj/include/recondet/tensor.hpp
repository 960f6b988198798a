#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace recondet::nn {

// Dense NCHW float tensor. Vectors are stored as (n, c, 1, 1).
struct Tensor {
  std::vector<float> data;
  int n = 0, c = 0, h = 0, w = 0;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.f), n(n_), c(c_), h(h_), w(w_) {}

  static Tensor vec(int n_, int dim) { return Tensor(n_, dim, 1, 1); }

  std::size_t size() const { return data.size(); }
  int chw() const { return c * h * w; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * chw(); }
  const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * chw(); }

  float& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  float at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  void zero() { std::fill(data.begin(), data.end(), 0.f); }
  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    assert(size() == o.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Tensor& operator*=(float s) {
    for (auto& v : data) v *= s;
    return *this;
  }
};

}  // namespace recondet::nn
