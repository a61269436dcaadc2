#include <gtest/gtest.h>

#include "attentionmask/nn.hpp"
#include "test_util.hpp"

using namespace am;
using namespace am::nn;

namespace {

Tensor random_tensor(Rng& rng, int h, int w, int c, double scale = 1.0) {
  Tensor t(h, w, c);
  for (auto& v : t.v) v = rng.gaussian() * scale;
  return t;
}

// Scalar probe loss: weighted sum of outputs with fixed random coefficients,
// so every output position contributes to the gradient.
struct Probe {
  std::vector<double> coeff;
  double operator()(const Tensor& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) s += coeff[i % coeff.size()] * y.v[i];
    return s;
  }
  Tensor grad(const Tensor& y) const {
    Tensor d(y.h, y.w, y.c);
    for (std::size_t i = 0; i < y.v.size(); ++i) d.v[i] = coeff[i % coeff.size()];
    return d;
  }
};

Probe make_probe(Rng& rng, int n = 97) {
  Probe p;
  for (int i = 0; i < n; ++i) p.coeff.push_back(rng.gaussian());
  return p;
}

}  // namespace

TEST(Conv2d, SpatialCeilArithmetic) {
  for (int h : {7, 8, 9, 75, 100, 128}) {
    Conv2d s2("t", 1, 1, 3, 2, 1);
    EXPECT_EQ(s2.out_h(h), ceil_div(h, 2)) << h;
    Conv2d s3("t", 1, 1, 3, 3, 1);
    EXPECT_EQ(s3.out_h(h), ceil_div(h, 3)) << h;
    Conv2d s1("t", 1, 1, 3, 1, 1);
    EXPECT_EQ(s1.out_h(h), h);
    Conv2d even = Conv2d::make_even_aligned("t", 1, 1, 4);
    EXPECT_EQ(even.out_h(h), h);
  }
}

TEST(Conv2d, ZeroWeightsGiveBiasMap) {
  Conv2d conv("t", 3, 2, 3, 1, 1);
  std::fill(conv.w.v.begin(), conv.w.v.end(), 0.0);
  conv.b.v = {0.5, -1.25};
  Rng rng(3);
  Tensor x = random_tensor(rng, 5, 6, 3);
  Tensor y = conv.forward(x);
  for (int yy = 0; yy < y.h; ++yy)
    for (int xx = 0; xx < y.w; ++xx) {
      EXPECT_DOUBLE_EQ(y.at(yy, xx, 0), 0.5);
      EXPECT_DOUBLE_EQ(y.at(yy, xx, 1), -1.25);
    }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int variant = 0; variant < 3; ++variant) {
    int stride = variant == 0 ? 1 : (variant == 1 ? 2 : 3);
    Conv2d conv("t", 3, 4, 3, stride, 1);
    ParamRefs ps;
    conv.collect(ps);
    init_params(ps, 5 + variant, /*randomize_all=*/true);
    Tensor x = random_tensor(rng, 9, 8, 3);
    Probe probe = make_probe(rng);

    auto loss = [&]() { return probe(conv.forward(x)); };
    Tensor y = conv.forward(x);
    for (Param* p : ps) p->zero_grad();
    Tensor dx = conv.backward(x, probe.grad(y));
    auto grads = testutil::snapshot_grads(ps);
    auto rep = testutil::finite_difference_check(ps, grads, loss);
    EXPECT_LT(rep.max_rel, 1e-5) << rep.worst_param << " stride " << stride;

    // input gradient via FD on a few entries
    for (int trial = 0; trial < 8; ++trial) {
      std::size_t i = rng.next_u64() % x.v.size();
      double orig = x.v[i], eps = 1e-5;
      x.v[i] = orig + eps;
      double lp = loss();
      x.v[i] = orig - eps;
      double lm = loss();
      x.v[i] = orig;
      EXPECT_LT(testutil::rel_error(dx.v[i], (lp - lm) / (2 * eps)), 1e-5);
    }
  }
}

TEST(Conv2d, EvenKernelGradient) {
  Rng rng(12);
  Conv2d conv = Conv2d::make_even_aligned("t", 2, 2, 4);
  ParamRefs ps;
  conv.collect(ps);
  init_params(ps, 9, true);
  Tensor x = random_tensor(rng, 6, 7, 2);
  Probe probe = make_probe(rng);
  auto loss = [&]() { return probe(conv.forward(x)); };
  Tensor y = conv.forward(x);
  EXPECT_EQ(y.h, x.h);
  EXPECT_EQ(y.w, x.w);
  for (Param* p : ps) p->zero_grad();
  conv.backward(x, probe.grad(y));
  auto rep =
      testutil::finite_difference_check(ps, testutil::snapshot_grads(ps), loss);
  EXPECT_LT(rep.max_rel, 1e-5) << rep.worst_param;
}

TEST(Deconv2x, ShapeAndGradient) {
  Rng rng(13);
  Deconv2x up("t", 3, 2);
  ParamRefs ps;
  up.collect(ps);
  init_params(ps, 21, true);
  Tensor x = random_tensor(rng, 5, 4, 3);
  Tensor y = up.forward(x);
  EXPECT_EQ(y.h, 10);
  EXPECT_EQ(y.w, 8);
  Probe probe = make_probe(rng);
  auto loss = [&]() { return probe(up.forward(x)); };
  for (Param* p : ps) p->zero_grad();
  up.backward(x, probe.grad(y));
  auto rep = testutil::finite_difference_check(ps, testutil::snapshot_grads(ps), loss);
  EXPECT_LT(rep.max_rel, 1e-5) << rep.worst_param;
}

TEST(Norm, FreshLayerIsIdentity) {
  Norm n("t", 3);
  ParamRefs ps;
  n.collect(ps);
  init_params(ps, 2);  // gamma 1, beta 0, stats (0, 1)
  Rng rng(14);
  Tensor x = random_tensor(rng, 4, 4, 3);
  Tensor y = n.forward(x);
  for (std::size_t i = 0; i < x.v.size(); ++i) EXPECT_NEAR(y.v[i], x.v[i], 1e-4);
}

TEST(Norm, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  Norm n("t", 3);
  n.mean = {0.2, -0.4, 1.0};
  n.var = {1.5, 0.7, 2.0};
  ParamRefs ps;
  n.collect(ps);
  init_params(ps, 4, true);
  Tensor x = random_tensor(rng, 4, 5, 3);
  Probe probe = make_probe(rng);
  auto loss = [&]() { return probe(n.forward(x)); };
  Tensor y = n.forward(x);
  for (Param* p : ps) p->zero_grad();
  n.backward(x, probe.grad(y));
  auto rep = testutil::finite_difference_check(ps, testutil::snapshot_grads(ps), loss);
  EXPECT_LT(rep.max_rel, 1e-5) << rep.worst_param;
}

TEST(Norm, RunningStatsConverge) {
  Norm n("t", 1);
  Rng rng(16);
  Tensor x(8, 8, 1);
  for (auto& v : x.v) v = 3.0 + rng.gaussian() * 0.5;
  for (int i = 0; i < 200; ++i) n.update_stats(x, 0.1);
  EXPECT_NEAR(n.mean[0], 3.0, 0.1);
  EXPECT_NEAR(std::sqrt(n.var[0]), 0.5, 0.1);
}

TEST(Pooling, AvgPoolCeilKeepsConstants) {
  Tensor x(5, 7, 2);
  for (auto& v : x.v) v = 4.25;
  Tensor y = avgpool2_ceil(x);
  EXPECT_EQ(y.h, 3);
  EXPECT_EQ(y.w, 4);
  for (double v : y.v) EXPECT_DOUBLE_EQ(v, 4.25);
}

TEST(Pooling, AvgPoolGradientSumsToOne) {
  Tensor x(5, 5, 1);
  Tensor dy(3, 3, 1);
  dy.at(1, 1, 0) = 1.0;
  Tensor dx = avgpool2_ceil_backward(5, 5, dy);
  double sum = 0.0;
  for (double v : dx.v) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Activations, StableBceAndSoftmax) {
  EXPECT_NEAR(bce_with_logits(0.0, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_with_logits(0.0, 0.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_with_logits(50.0, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(bce_with_logits(-50.0, 0.0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(bce_with_logits(1000.0, 0.0)));
  EXPECT_NEAR(softmax2_ce(0.0, 0.0, 1), std::log(2.0), 1e-12);
  EXPECT_NEAR(softmax2_prob1(0.0, 0.0), 0.5, 1e-12);
  EXPECT_NEAR(softmax2_prob1(-10.0, 10.0), 1.0, 1e-8);

  // gradient spot checks
  double d0, d1;
  softmax2_ce_grad(0.3, -0.9, 1, d0, d1);
  double eps = 1e-6;
  EXPECT_NEAR(d0, (softmax2_ce(0.3 + eps, -0.9, 1) - softmax2_ce(0.3 - eps, -0.9, 1)) / (2 * eps),
              1e-6);
  EXPECT_NEAR(d1, (softmax2_ce(0.3, -0.9 + eps, 1) - softmax2_ce(0.3, -0.9 - eps, 1)) / (2 * eps),
              1e-6);
  EXPECT_NEAR(bce_with_logits_grad(0.7, 1.0),
              (bce_with_logits(0.7 + eps, 1.0) - bce_with_logits(0.7 - eps, 1.0)) / (2 * eps),
              1e-6);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  Linear fc("t", 6, 3);
  ParamRefs ps;
  fc.collect(ps);
  init_params(ps, 31, true);
  std::vector<double> x(6);
  for (auto& v : x) v = rng.gaussian();
  std::vector<double> coeff = {0.7, -1.1, 0.4};
  auto loss = [&]() {
    auto y = fc.forward(x);
    return coeff[0] * y[0] + coeff[1] * y[1] + coeff[2] * y[2];
  };
  for (Param* p : ps) p->zero_grad();
  fc.backward(x, coeff);
  auto rep = testutil::finite_difference_check(ps, testutil::snapshot_grads(ps), loss);
  EXPECT_LT(rep.max_rel, 1e-6) << rep.worst_param;
}

TEST(Sgd, ConvergesOnQuadratic) {
  Param p("x", {1}, Init::Zero);
  p.v[0] = 0.0;
  ParamRefs ps = {&p};
  Sgd opt;
  opt.lr = 0.05;
  opt.momentum = 0.9;
  for (int step = 0; step < 300; ++step) {
    p.zero_grad();
    p.g[0] = 2.0 * (p.v[0] - 3.0);
    opt.step(ps);
  }
  EXPECT_NEAR(p.v[0], 3.0, 1e-4);
}

TEST(Sgd, ClipsGlobalNorm) {
  Param p("x", {2}, Init::Zero);
  ParamRefs ps = {&p};
  Sgd opt;
  opt.lr = 1.0;
  opt.momentum = 0.0;
  opt.clip_norm = 10.0;
  p.g = {3000.0, 4000.0};  // norm 5000 -> scaled to 10
  double norm = opt.step(ps);
  EXPECT_NEAR(norm, 5000.0, 1e-9);
  EXPECT_NEAR(p.v[0], -10.0 * 3.0 / 5.0, 1e-9);
  EXPECT_NEAR(p.v[1], -10.0 * 4.0 / 5.0, 1e-9);
}

TEST(Rngs, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c = Rng(42).sub(7), d = Rng(42).sub(7), e = Rng(42).sub(8);
  EXPECT_EQ(c.next_u64(), d.next_u64());
  EXPECT_NE(c.next_u64(), e.next_u64());
  Rng g(9);
  for (int i = 0; i < 1000; ++i) {
    double u = g.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
