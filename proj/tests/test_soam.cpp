#include <gtest/gtest.h>

#include "attentionmask/soam.hpp"
#include "test_util.hpp"

using namespace am;

namespace {

ScaleSpec spec_of(int stride, int stream = 1) {
  return ScaleSpec{"S" + std::to_string(stride), stride, stream, 10};
}

const std::vector<ScaleSpec> kJointScales = {
    spec_of(8, 1),  spec_of(16, 1), spec_of(24, 2), spec_of(32, 1), spec_of(48, 2),
    spec_of(64, 1), spec_of(96, 2), spec_of(128, 1), spec_of(192, 2)};

AnnotatedObject box_object(int id, int h, int w, int y, int x, int bh, int bw) {
  return make_object(id, testutil::rect_mask(h, w, y, x, bh, bw), "rectangle");
}

}  // namespace

TEST(Soam, ArchitectureMatchesContract) {
  Soam soam(SoamConfig{}, 4);  // default depth: 3x3/128 + 4x4/2
  EXPECT_EQ(soam.conv1.kh, 3);
  EXPECT_EQ(soam.conv1.out_c, 128);
  EXPECT_EQ(soam.conv2.kh, 4);
  EXPECT_EQ(soam.conv2.out_c, 2);

  Soam s256(SoamConfig{SoamDepth::Hidden256, false}, 4);
  EXPECT_EQ(s256.conv1.out_c, 256);
  Soam single(SoamConfig{SoamDepth::Single, false}, 4);
  EXPECT_EQ(single.conv2.in_c, 4);

  // output grid matches the feature grid (even-kernel alignment pads 1/2)
  nn::ParamRefs ps;
  soam.collect(ps);
  nn::init_params(ps, 3, true);
  Tensor f(13, 9, 4);
  Soam::Cache cc;
  Tensor logits = soam.forward_logits(f, cc);
  EXPECT_EQ(logits.h, 13);
  EXPECT_EQ(logits.w, 9);
  EXPECT_EQ(logits.c, 2);

  Tensor wrong(5, 5, 7);
  EXPECT_THROW(soam.forward_logits(wrong, cc), ConfigError);
}

TEST(Soam, FreshModuleGivesHalfEverywhere) {
  Soam soam(SoamConfig{}, 4);
  nn::ParamRefs ps;
  soam.collect(ps);
  nn::init_params(ps, 5);  // conv2 zero-initialized
  Rng rng(6);
  FeatureMap f{Tensor(7, 11, 4), 16};
  for (auto& v : f.data.v) v = rng.gaussian();
  AttentionMap m = compute_attention(f, soam, spec_of(16));
  for (double p : m.probs) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(Soam, BiasDominatedLogitsSaturate) {
  Soam soam(SoamConfig{SoamDepth::Single, false}, 4);
  nn::ParamRefs ps;
  soam.collect(ps);
  nn::init_params(ps, 5);
  soam.conv2.b.v = {-10.0, 10.0};  // (non-object, object)
  FeatureMap f{Tensor(6, 6, 4), 16};
  AttentionMap m = compute_attention(f, soam, spec_of(16));
  for (double p : m.probs) EXPECT_GT(p, 1.0 - 1e-8);
}

TEST(Soam, TwoClassProbabilitiesSumToOne) {
  Soam soam(SoamConfig{}, 4);
  nn::ParamRefs ps;
  soam.collect(ps);
  nn::init_params(ps, 7, true);
  Rng rng(8);
  Tensor f(9, 9, 4);
  for (auto& v : f.v) v = rng.gaussian();
  Soam::Cache cc;
  Tensor logits = soam.forward_logits(f, cc);
  for (int r = 0; r < logits.h; ++r)
    for (int c = 0; c < logits.w; ++c) {
      double p1 = nn::softmax2_prob1(logits.at(r, c, 0), logits.at(r, c, 1));
      double p0 = nn::softmax2_prob1(logits.at(r, c, 1), logits.at(r, c, 0));
      EXPECT_NEAR(p0 + p1, 1.0, 1e-6);
      EXPECT_GE(p1, 0.0);
      EXPECT_LE(p1, 1.0);
    }
}

TEST(FitsScale, PaperBandExamples) {
  AnnotatedObject o = box_object(1, 256, 256, 10, 10, 100, 70);  // bbox 70x100
  EXPECT_TRUE(fits_scale(o, spec_of(16)));  // band [64,128]

  AnnotatedObject o2 = box_object(1, 256, 256, 10, 10, 130, 70);  // 130 > 128
  EXPECT_FALSE(fits_scale(o2, spec_of(16)));

  AnnotatedObject o3 = box_object(1, 256, 256, 10, 10, 40, 40);
  EXPECT_TRUE(fits_scale(o3, spec_of(8)));    // band [32,64]
  EXPECT_FALSE(fits_scale(o3, spec_of(16)));  // scale exclusivity

  // inclusive band edges, exact integer arithmetic
  AnnotatedObject lo = box_object(1, 256, 256, 0, 0, 32, 32);
  AnnotatedObject hi = box_object(1, 256, 256, 0, 0, 64, 64);
  EXPECT_TRUE(fits_scale(lo, spec_of(8)));
  EXPECT_TRUE(fits_scale(hi, spec_of(8)));
  AnnotatedObject under = box_object(1, 256, 256, 0, 0, 31, 32);
  EXPECT_FALSE(fits_scale(under, spec_of(8)));
}

// Fitting scales form a contiguous run of length <= 2 in the joint ordering,
// except the exact band-intersection squares (192, 384, 768) which fit 3.
TEST(FitsScale, AdjacencyProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 4000; ++trial) {
    int w = rng.uniform_int(4, 1600);
    int h = std::min(1600, std::max(4, w + rng.uniform_int(-w / 3, w / 3)));
    AnnotatedObject o = box_object(1, 2048, 2048, 0, 0, h, w);
    std::vector<int> fit_idx;
    for (std::size_t i = 0; i < kJointScales.size(); ++i)
      if (fits_scale(o, kJointScales[i])) fit_idx.push_back(int(i));
    if (fit_idx.empty()) continue;
    for (std::size_t i = 1; i < fit_idx.size(); ++i)
      ASSERT_EQ(fit_idx[i], fit_idx[i - 1] + 1) << "non-contiguous for " << w << "x" << h;
    bool triple_point = (w == h) && (w == 192 || w == 384 || w == 768);
    if (triple_point)
      ASSERT_EQ(fit_idx.size(), 3u);
    else
      ASSERT_LE(fit_idx.size(), 2u) << w << "x" << h;
  }
}

TEST(FitsScale, EverySquareSideInRangeFitsSomewhere) {
  for (int side = 32; side <= 1536; ++side) {
    AnnotatedObject o = box_object(1, 2048, 2048, 0, 0, side, side);
    bool any = false;
    for (const auto& sc : kJointScales) any = any || fits_scale(o, sc);
    ASSERT_TRUE(any) << "square side " << side << " fits no scale";
  }
}

TEST(GtAttention, NoFittingObjectsGivesZeros) {
  ImageSample s = testutil::sample_with_rects(256, 256, {{10, 10, 40, 40}});
  GtAttention gt = build_gt_attention(s, spec_of(32));  // band [128,256]
  EXPECT_EQ(gt.positive_count(), 0);
}

// Aligned 40x40 object: positives are exactly the max-pooled 5x5 block;
// verified against a brute-force per-cell footprint intersection.
TEST(GtAttention, MaxPoolFootprintOracle) {
  ImageSample s = testutil::sample_with_rects(128, 128, {{40, 40, 40, 40}});
  GtAttention gt = build_gt_attention(s, spec_of(8));
  ASSERT_EQ(gt.h, 16);
  ASSERT_EQ(gt.w, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      bool in_block = r >= 5 && r <= 9 && c >= 5 && c <= 9;
      ASSERT_EQ(gt.at(r, c) == 1, in_block) << r << "," << c;
    }

  // brute-force oracle on an unaligned placement
  ImageSample s2 = testutil::sample_with_rects(128, 128, {{43, 37, 41, 44}});
  GtAttention gt2 = build_gt_attention(s2, spec_of(8));
  const auto& o = s2.objects[0];
  ASSERT_TRUE(fits_scale(o, spec_of(8)));
  for (int r = 0; r < gt2.h; ++r)
    for (int c = 0; c < gt2.w; ++c) {
      bool expect = false;
      for (int y = r * 8; y < std::min(128, (r + 1) * 8) && !expect; ++y)
        for (int x = c * 8; x < std::min(128, (c + 1) * 8) && !expect; ++x)
          expect = o.mask.get(y, x);
      ASSERT_EQ(gt2.at(r, c) == 1, expect) << r << "," << c;
    }
}

// The small-object contract: an object fitting only the finest scale yields
// positives at S8 and nowhere else.
TEST(GtAttention, SmallObjectsMarkOnlyS8) {
  ImageSample s = testutil::sample_with_rects(256, 256, {{100, 60, 36, 36}, {30, 180, 34, 35}});
  BackboneConfig cfg = testutil::tiny_backbone();
  for (const auto& spec : cfg.scales()) {
    GtAttention gt = build_gt_attention(s, spec);
    if (spec.stride == 8)
      EXPECT_GT(gt.positive_count(), 0);
    else
      EXPECT_EQ(gt.positive_count(), 0) << spec.name;
  }
}

TEST(GtAttention, CellsOfNonFittingObjectsStayZero) {
  // One fitting object, one much larger object: only the first marks cells.
  ImageSample s = testutil::sample_with_rects(512, 512, {{20, 20, 40, 40}, {200, 200, 280, 280}});
  GtAttention gt = build_gt_attention(s, spec_of(8));
  const auto& big = s.objects[1];
  ASSERT_FALSE(fits_scale(big, spec_of(8)));
  for (int r = 0; r < gt.h; ++r)
    for (int c = 0; c < gt.w; ++c)
      if (gt.at(r, c) == 1) {
        bool inside_big = r * 8 >= big.bbox.y && (r + 1) * 8 <= big.bbox.y + big.bbox.h &&
                          c * 8 >= big.bbox.x && (c + 1) * 8 <= big.bbox.x + big.bbox.w;
        ASSERT_FALSE(inside_big);
      }
}

TEST(AttentionLoss, PerfectAndUniformLogits) {
  ImageSample s = testutil::sample_with_rects(128, 128, {{40, 40, 40, 40}});
  GtAttention gt = build_gt_attention(s, spec_of(8));
  Tensor logits(gt.h, gt.w, 2);
  for (int r = 0; r < gt.h; ++r)
    for (int c = 0; c < gt.w; ++c) {
      bool pos = gt.at(r, c) == 1;
      logits.at(r, c, 0) = pos ? -10.0 : 10.0;
      logits.at(r, c, 1) = pos ? 10.0 : -10.0;
    }
  Rng rng(3);
  EXPECT_LT(attention_loss(logits, gt, rng), 1e-3);

  Tensor uniform(gt.h, gt.w, 2);
  Rng rng2(3);
  EXPECT_NEAR(attention_loss(uniform, gt, rng2), std::log(2.0), 1e-12);
}

TEST(AttentionLoss, ThreeNegativesPerPositive) {
  GtAttention gt;
  gt.h = 6;
  gt.w = 17;  // 102 cells: 2 positives, 100 negatives
  gt.scale = spec_of(16);
  gt.labels.assign(102, 0);
  gt.labels[10] = 1;
  gt.labels[60] = 1;
  Rng rng(4);
  auto cells = sample_attention_cells(gt, rng);
  ASSERT_EQ(cells.size(), 8u);  // 2 positives + 6 sampled negatives
  int pos = 0, neg = 0;
  std::set<std::pair<int, int>> uniq;
  for (const auto& cell : cells) {
    (cell.label == 1 ? pos : neg)++;
    EXPECT_TRUE(uniq.insert({cell.r, cell.c}).second) << "sampled with replacement";
  }
  EXPECT_EQ(pos, 2);
  EXPECT_EQ(neg, 6);

  // fewer negatives than 3x positives: take all of them
  GtAttention tiny;
  tiny.h = 2;
  tiny.w = 2;
  tiny.scale = spec_of(16);
  tiny.labels = {1, 1, 0, 0};
  Rng rng3(5);
  EXPECT_EQ(sample_attention_cells(tiny, rng3).size(), 4u);

  // no positives: empty set, zero loss
  GtAttention empty;
  empty.h = empty.w = 4;
  empty.scale = spec_of(16);
  empty.labels.assign(16, 0);
  Rng rng4(6);
  EXPECT_TRUE(sample_attention_cells(empty, rng4).empty());
  Tensor logits(4, 4, 2);
  Rng rng5(6);
  EXPECT_DOUBLE_EQ(attention_loss(logits, empty, rng5), 0.0);
}

TEST(AttentionLoss, GradientMatchesFiniteDifferences) {
  GtAttention gt;
  gt.h = 5;
  gt.w = 7;
  gt.scale = spec_of(16);
  gt.labels.assign(35, 0);
  gt.labels[3] = 1;
  gt.labels[17] = 1;
  gt.labels[30] = 1;
  Rng rng(8);
  auto cells = sample_attention_cells(gt, rng);

  Rng prng(9);
  Tensor logits(5, 7, 2);
  for (auto& v : logits.v) v = prng.gaussian();
  Tensor dlogits(5, 7, 2);
  attention_loss_grad_on_cells(logits, cells, 1.0, dlogits);

  double eps = 1e-6;
  for (std::size_t i = 0; i < logits.v.size(); ++i) {
    double orig = logits.v[i];
    logits.v[i] = orig + eps;
    double lp = attention_loss_on_cells(logits, cells);
    logits.v[i] = orig - eps;
    double lm = attention_loss_on_cells(logits, cells);
    logits.v[i] = orig;
    EXPECT_LT(testutil::rel_error(dlogits.v[i], (lp - lm) / (2 * eps)), 1e-4);
  }
}

// Single-map ablation: positives on the finest grid are a superset of every
// coarser scale's positives rebuilt on that grid.
TEST(SingleMap, UnionIsSupersetOfEveryScale) {
  SyntheticConfig cfg;
  cfg.count = 6;
  cfg.height = cfg.width = 256;
  cfg.min_px = 16;
  cfg.max_px = 160;
  cfg.min_objects = 2;
  cfg.max_objects = 5;
  cfg.seed = 21;
  DatasetManifest data = generate_synthetic_dataset(cfg);
  auto scales = testutil::tiny_backbone().scales();
  const ScaleSpec& finest = scales.front();
  for (const auto& sample : data.samples) {
    GtAttention uni = build_gt_attention_union(sample, scales);
    for (const auto& sc : scales) {
      // per-scale positives, rasterized on the finest grid
      ImageSample fitting;
      fitting.id = sample.id;
      fitting.image = sample.image;
      for (const auto& o : sample.objects)
        if (fits_scale(o, sc)) fitting.objects.push_back(o);
      GtAttention on_fine = build_gt_attention(fitting, finest, uni.h, uni.w);
      for (std::size_t i = 0; i < uni.labels.size(); ++i)
        if (on_fine.labels[i] == 1) ASSERT_EQ(uni.labels[i], 1) << sample.id << " " << sc.name;
    }
  }
}
