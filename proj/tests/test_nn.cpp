#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "doctest.h"
#include "recondet/layers.hpp"
#include "recondet/rng.hpp"
#include "recondet/tensor.hpp"

using namespace recondet;
using namespace recondet::nn;

namespace {

Tensor rand_tensor(int n, int c, int h, int w, Rng& rng, float scale = 1.f) {
  Tensor t(n, c, h, w);
  rng.fill_normal(t.data, 0.f, scale);
  return t;
}

// Values bounded away from zero so kinked activations stay differentiable
// at every probe point.
Tensor rand_away_from_zero(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (auto& v : t.data) {
    float m = static_cast<float>(rng.uniform(0.2, 1.0));
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

double dot_loss(const Tensor& y, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i)
    acc += static_cast<double>(y.data[i]) * r.data[i];
  return acc;
}

// Central-difference check of dL/dv for every entry of `values`, where the
// loss is recomputed by `loss_fn` after each perturbation.
void fd_check(std::vector<float>& values, const std::vector<float>& analytic,
              const std::function<double()>& loss_fn, double h = 1e-2, double tol = 2e-2) {
  REQUIRE(values.size() == analytic.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float keep = values[i];
    values[i] = keep + static_cast<float>(h);
    const double lp = loss_fn();
    values[i] = keep - static_cast<float>(h);
    const double lm = loss_fn();
    values[i] = keep;
    const double fd = (lp - lm) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({1.0, std::abs(fd), std::abs(a)});
    CHECK(std::abs(fd - a) / denom < tol);
  }
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(101);
  Conv2d conv("c", 3, 4, 3, 1, 1, rng);
  Tensor x = rand_tensor(2, 3, 5, 5, rng);
  Tensor r = rand_tensor(2, 4, 5, 5, rng);

  auto loss = [&]() { return dot_loss(conv.forward(x, false), r); };

  Tensor y = conv.forward(x, true);
  REQUIRE(y.n == 2);
  REQUIRE(y.c == 4);
  REQUIRE(y.h == 5);
  REQUIRE(y.w == 5);
  conv.weight.grad.zero();
  conv.bias.grad.zero();
  Tensor dx = conv.backward(r);

  SUBCASE("input") { fd_check(x.data, dx.data, loss); }
  SUBCASE("weight") { fd_check(conv.weight.value.data, conv.weight.grad.data, loss); }
  SUBCASE("bias") { fd_check(conv.bias.value.data, conv.bias.grad.data, loss); }
}

TEST_CASE("strided conv2d gradients and output size") {
  Rng rng(103);
  Conv2d conv("c", 2, 3, 3, 2, 1, rng);
  Tensor x = rand_tensor(2, 2, 8, 8, rng);
  Tensor y0 = conv.forward(x, false);
  REQUIRE(y0.h == 4);
  REQUIRE(y0.w == 4);
  Tensor r = rand_tensor(2, 3, 4, 4, rng);
  auto loss = [&]() { return dot_loss(conv.forward(x, false), r); };

  conv.forward(x, true);
  conv.weight.grad.zero();
  conv.bias.grad.zero();
  Tensor dx = conv.backward(r);
  fd_check(x.data, dx.data, loss);
  fd_check(conv.weight.value.data, conv.weight.grad.data, loss);
}

TEST_CASE("conv2d 1x1 kernel") {
  Rng rng(105);
  Conv2d conv("c", 4, 2, 1, 1, 0, rng);
  Tensor x = rand_tensor(1, 4, 6, 6, rng);
  Tensor r = rand_tensor(1, 2, 6, 6, rng);
  auto loss = [&]() { return dot_loss(conv.forward(x, false), r); };
  conv.forward(x, true);
  conv.weight.grad.zero();
  conv.bias.grad.zero();
  Tensor dx = conv.backward(r);
  fd_check(x.data, dx.data, loss);
  fd_check(conv.weight.value.data, conv.weight.grad.data, loss);
}

TEST_CASE("zero initialized conv starts as the zero map") {
  Rng rng(107);
  Conv2d conv("c", 3, 3, 3, 1, 1, rng, true);
  Tensor x = rand_tensor(1, 3, 4, 4, rng);
  Tensor y = conv.forward(x, false);
  for (float v : y.data) CHECK(v == 0.f);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(109);
  Linear fc("fc", 6, 4, rng);
  Tensor x = rand_tensor(3, 6, 1, 1, rng);
  Tensor r = rand_tensor(3, 4, 1, 1, rng);
  auto loss = [&]() { return dot_loss(fc.forward(x, false), r); };
  fc.forward(x, true);
  fc.weight.grad.zero();
  fc.bias.grad.zero();
  Tensor dx = fc.backward(r);
  fd_check(x.data, dx.data, loss);
  fd_check(fc.weight.value.data, fc.weight.grad.data, loss);
  fd_check(fc.bias.value.data, fc.bias.grad.data, loss);
}

TEST_CASE("linear accepts spatial input of matching volume") {
  Rng rng(111);
  Linear fc("fc", 2 * 3 * 3, 5, rng);
  Tensor x = rand_tensor(2, 2, 3, 3, rng);
  Tensor y = fc.forward(x, false);
  CHECK(y.n == 2);
  CHECK(y.chw() == 5);
}

TEST_CASE("activation gradients") {
  Rng rng(113);
  Tensor x = rand_away_from_zero(2, 3, 4, 4, rng);
  Tensor r = rand_tensor(2, 3, 4, 4, rng);

  auto check_layer = [&](Layer& layer) {
    auto loss = [&]() { return dot_loss(layer.forward(x, false), r); };
    layer.forward(x, true);
    Tensor dx = layer.backward(r);
    fd_check(x.data, dx.data, loss, 1e-3);
  };

  SUBCASE("relu") {
    ReLU l;
    check_layer(l);
  }
  SUBCASE("leaky relu") {
    LeakyReLU l(0.2f);
    check_layer(l);
  }
  SUBCASE("silu") {
    SiLU l;
    check_layer(l);
  }
  SUBCASE("tanh") {
    Tanh l;
    check_layer(l);
  }
}

TEST_CASE("leaky relu slope on the negative side") {
  LeakyReLU l(0.2f);
  Tensor x(1, 1, 1, 2);
  x.data = {-1.f, 2.f};
  Tensor y = l.forward(x, false);
  CHECK(y.data[0] == doctest::Approx(-0.2f));
  CHECK(y.data[1] == doctest::Approx(2.f));
}

TEST_CASE("group norm output statistics") {
  Rng rng(115);
  GroupNorm gn("gn", 8, 4);
  Tensor x = rand_tensor(2, 8, 4, 4, rng, 2.f);
  for (auto& v : x.data) v += 1.5f;
  Tensor y = gn.forward(x, false);
  // gamma=1, beta=0 at init: each (sample, group) slab is standardized.
  const int cg = 2;
  const std::size_t m = static_cast<std::size_t>(cg) * 4 * 4;
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 4; ++g) {
      const float* p = y.sample(n) + static_cast<std::size_t>(g) * m;
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < m; ++i) mean += p[i];
      mean /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) var += (p[i] - mean) * (p[i] - mean);
      var /= static_cast<double>(m);
      CHECK(std::abs(mean) < 1e-5);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("group norm gradients match finite differences") {
  Rng rng(117);
  GroupNorm gn("gn", 4, 2);
  rng.fill_normal(gn.gamma.value.data, 1.f, 0.2f);
  rng.fill_normal(gn.beta.value.data, 0.f, 0.2f);
  Tensor x = rand_tensor(2, 4, 3, 3, rng);
  Tensor r = rand_tensor(2, 4, 3, 3, rng);
  auto loss = [&]() { return dot_loss(gn.forward(x, false), r); };
  gn.forward(x, true);
  gn.gamma.grad.zero();
  gn.beta.grad.zero();
  Tensor dx = gn.backward(r);
  fd_check(x.data, dx.data, loss);
  fd_check(gn.gamma.value.data, gn.gamma.grad.data, loss);
  fd_check(gn.beta.value.data, gn.beta.grad.data, loss);
}

TEST_CASE("adain gradients match finite differences") {
  Rng rng(119);
  AdaIN ada;
  Tensor x = rand_tensor(2, 3, 4, 4, rng);
  Tensor scale = rand_tensor(2, 3, 1, 1, rng, 0.5f);
  for (auto& v : scale.data) v += 1.f;
  Tensor bias = rand_tensor(2, 3, 1, 1, rng, 0.5f);
  Tensor r = rand_tensor(2, 3, 4, 4, rng);

  auto loss = [&]() { return dot_loss(ada.forward(x, scale, bias, false), r); };
  ada.forward(x, scale, bias, true);
  Tensor d_scale, d_bias;
  Tensor dx = ada.backward(r, d_scale, d_bias);
  fd_check(x.data, dx.data, loss);
  fd_check(scale.data, d_scale.data, loss);
  fd_check(bias.data, d_bias.data, loss);
}

TEST_CASE("adain normalizes each channel before styling") {
  Rng rng(121);
  AdaIN ada;
  Tensor x = rand_tensor(1, 2, 8, 8, rng, 3.f);
  Tensor scale = Tensor::vec(1, 2);
  scale.fill(1.f);
  Tensor bias = Tensor::vec(1, 2);
  Tensor y = ada.forward(x, scale, bias, false);
  const std::size_t plane = 64;
  for (int c = 0; c < 2; ++c) {
    const float* p = y.sample(0) + c * plane;
    double mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    CHECK(std::abs(mean / 64.0) < 1e-5);
  }
}

TEST_CASE("upsample nearest doubles and backward sums") {
  Rng rng(123);
  UpsampleNearest2x up;
  Tensor x = rand_tensor(1, 2, 3, 3, rng);
  Tensor y = up.forward(x, true);
  REQUIRE(y.h == 6);
  REQUIRE(y.w == 6);
  CHECK(y.at(0, 1, 4, 5) == x.at(0, 1, 2, 2));
  CHECK(y.at(0, 0, 0, 1) == x.at(0, 0, 0, 0));

  Tensor dy(1, 2, 6, 6);
  dy.fill(1.f);
  Tensor dx = up.backward(dy);
  REQUIRE(dx.h == 3);
  for (float v : dx.data) CHECK(v == doctest::Approx(4.f));
}

TEST_CASE("global average pool forward and backward") {
  Rng rng(125);
  GlobalAvgPool gap;
  Tensor x = rand_tensor(2, 3, 4, 4, rng);
  Tensor r = rand_tensor(2, 3, 1, 1, rng);
  auto loss = [&]() { return dot_loss(gap.forward(x, false), r); };
  Tensor y = gap.forward(x, true);
  REQUIRE(y.chw() == 3);
  Tensor dx = gap.backward(r);
  fd_check(x.data, dx.data, loss, 1e-2);
}

TEST_CASE("sequential composes forward and backward") {
  Rng rng(127);
  Sequential net;
  net.add(std::make_unique<Conv2d>("c1", 2, 4, 3, 1, 1, rng));
  net.add(std::make_unique<LeakyReLU>());
  net.add(std::make_unique<Conv2d>("c2", 4, 2, 3, 1, 1, rng));
  Tensor x = rand_tensor(1, 2, 5, 5, rng);
  Tensor r = rand_tensor(1, 2, 5, 5, rng);
  auto loss = [&]() { return dot_loss(net.forward(x, false), r); };
  net.forward(x, true);
  std::vector<Param*> params;
  net.collect(params);
  REQUIRE(params.size() == 4);
  for (auto* p : params) p->grad.zero();
  Tensor dx = net.backward(r);
  fd_check(x.data, dx.data, loss);
  fd_check(params[0]->value.data, params[0]->grad.data, loss);
}

TEST_CASE("backward accumulates gradients across calls") {
  Rng rng(129);
  Linear fc("fc", 3, 2, rng);
  Tensor x = rand_tensor(2, 3, 1, 1, rng);
  Tensor r = rand_tensor(2, 2, 1, 1, rng);
  fc.forward(x, true);
  fc.weight.grad.zero();
  fc.backward(r);
  Tensor once = fc.weight.grad;
  fc.forward(x, true);
  fc.backward(r);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    CHECK(fc.weight.grad.data[i] == doctest::Approx(2.f * once.data[i]).epsilon(1e-5));
}

TEST_CASE("sinusoidal embedding basics") {
  Tensor e = sinusoidal_embedding({0, 7}, 8);
  REQUIRE(e.n == 2);
  REQUIRE(e.chw() == 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e.data[i] == doctest::Approx(0.f));       // sin(0)
    CHECK(e.data[4 + i] == doctest::Approx(1.f));   // cos(0)
  }
  CHECK(e.data[8] == doctest::Approx(std::sin(7.0)).epsilon(1e-6));
  for (std::size_t i = 0; i < e.data.size(); ++i) {
    CHECK(e.data[i] <= 1.f);
    CHECK(e.data[i] >= -1.f);
  }
  CHECK_THROWS(sinusoidal_embedding({1}, 7));
}

TEST_CASE("concat and split channels round trip") {
  Rng rng(131);
  Tensor a = rand_tensor(2, 3, 4, 4, rng);
  Tensor b = rand_tensor(2, 5, 4, 4, rng);
  Tensor ab = concat_channels(a, b);
  REQUIRE(ab.c == 8);
  CHECK(ab.at(1, 2, 3, 3) == a.at(1, 2, 3, 3));
  CHECK(ab.at(1, 3, 0, 0) == b.at(1, 0, 0, 0));
  Tensor a2, b2;
  split_channels(ab, 3, a2, b2);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a2.data[i] == a.data[i]);
  for (std::size_t i = 0; i < b.data.size(); ++i) CHECK(b2.data[i] == b.data[i]);
}

TEST_CASE("adam first step has unit scale times learning rate") {
  Param p("p", Tensor(1, 1, 1, 1));
  p.value.data[0] = 1.f;
  Adam opt({&p}, 0.1);
  p.grad.data[0] = 2.f;
  opt.step();
  CHECK(p.value.data[0] == doctest::Approx(0.9f).epsilon(1e-4));
}

TEST_CASE("adam minimizes a quadratic") {
  Param p("p", Tensor(1, 1, 1, 1));
  p.value.data[0] = 3.f;
  Adam opt({&p}, 0.05);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    p.grad.data[0] = 2.f * p.value.data[0];
    opt.step();
  }
  CHECK(std::abs(p.value.data[0]) < 1e-2);
}

TEST_CASE("adam zero_grad clears accumulators") {
  Param p("p", Tensor(1, 2, 1, 1));
  Adam opt({&p}, 0.1);
  p.grad.data[0] = 5.f;
  p.grad.data[1] = -2.f;
  opt.zero_grad();
  CHECK(p.grad.data[0] == 0.f);
  CHECK(p.grad.data[1] == 0.f);
}

TEST_CASE("all_finite flags bad values") {
  Tensor t(1, 1, 1, 3);
  t.data = {1.f, 2.f, 3.f};
  CHECK(all_finite(t));
  t.data[1] = std::numeric_limits<float>::infinity();
  CHECK(!all_finite(t));
  t.data[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK(!all_finite(t));
}

TEST_CASE("identical seeds give identical initializations") {
  Rng r1(42), r2(42);
  Conv2d c1("c", 3, 8, 3, 1, 1, r1);
  Conv2d c2("c", 3, 8, 3, 1, 1, r2);
  for (std::size_t i = 0; i < c1.weight.value.data.size(); ++i)
    CHECK(c1.weight.value.data[i] == c2.weight.value.data[i]);
}
