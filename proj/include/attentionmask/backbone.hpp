#pragma once

#include <array>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"
#include "attentionmask/nn.hpp"

namespace am {

enum class Variant { Am8_128, Am8_192, Am16_192 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Am8_128: return "am8_128";
    case Variant::Am8_192: return "am8_192";
    default: return "am16_192";
  }
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "am8_128") return Variant::Am8_128;
  if (s == "am8_192") return Variant::Am8_192;
  if (s == "am16_192") return Variant::Am16_192;
  throw ConfigError("unknown variant: " + s);
}

// One pyramid level: stride n, stream membership and the image-space side of
// a sampled window (window_size feature cells).
struct ScaleSpec {
  std::string name;     // "S8", "S16", ...
  int stride = 0;
  int stream = 1;       // 1: /2 branch, 2: /3 branch
  int window_size = 10; // feature cells per window side

  int window_px() const { return window_size * stride; }
};

struct BackboneConfig {
  Variant variant = Variant::Am8_128;
  std::array<int, 4> channels{32, 64, 128, 128};  // three stage-a stages + stage-b
  int common_channels = 32;                        // after lateral projection
  int window_size = 10;
  std::array<int, 4> blocks{1, 1, 1, 1};           // residual blocks per stage

  bool has_s8() const { return variant != Variant::Am16_192; }
  bool has_s192() const { return variant != Variant::Am8_128; }

  void validate() const {
    for (int c : channels)
      if (c < 1) throw ConfigError("backbone: channels must be positive");
    for (int b : blocks)
      if (b < 1) throw ConfigError("backbone: blocks must be >= 1");
    if (common_channels < 1) throw ConfigError("backbone: common_channels must be positive");
    if (window_size < 4 || window_size % 2 != 0)
      throw ConfigError("backbone: window_size must be even and >= 4");
  }

  // Active scales sorted by stride; strictly increasing by construction.
  std::vector<ScaleSpec> scales() const {
    std::vector<ScaleSpec> out;
    auto add = [&](int stride, int stream) {
      out.push_back(ScaleSpec{"S" + std::to_string(stride), stride, stream, window_size});
    };
    if (has_s8()) add(8, 1);
    add(16, 1);
    add(24, 2);
    add(32, 1);
    add(48, 2);
    add(64, 1);
    add(96, 2);
    add(128, 1);
    if (has_s192()) add(192, 2);
    return out;
  }
};

struct FeatureMap {
  Tensor data;
  int stride = 0;
};

struct PyramidLevel {
  ScaleSpec spec;
  FeatureMap map;
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;  // stride-ascending

  int index_of_stride(int stride) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i].spec.stride == stride) return int(i);
    throw ShapeError("pyramid has no stride-" + std::to_string(stride) + " level");
  }
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

// conv-norm-ReLU x2 with shortcut; the shortcut is a projection whenever the
// stride or channel count changes. Strided variants use k=3, pad=1 so the
// spatial size is exactly ceil(in/stride).
struct ResBlock {
  nn::Conv2d c1, c2;
  nn::Norm n1, n2;
  bool proj = false;
  nn::Conv2d cp;
  nn::Norm np;

  struct Cache {
    Tensor x, y1, y1n, y1r, y2, y2n, sp, spn, pre;
  };

  ResBlock() = default;
  ResBlock(const std::string& name, int in_c, int out_c, int stride)
      : c1(name + ".c1", in_c, out_c, 3, stride, 1),
        c2(name + ".c2", out_c, out_c, 3, 1, 1),
        n1(name + ".n1", out_c), n2(name + ".n2", out_c) {
    proj = (stride != 1 || in_c != out_c);
    if (proj) {
      cp = nn::Conv2d(name + ".cp", in_c, out_c, 1, stride, 0);
      np = nn::Norm(name + ".np", out_c);
    }
  }

  Tensor forward(const Tensor& x, Cache& cc) const {
    cc.x = x;
    cc.y1 = c1.forward(x);
    cc.y1n = n1.forward(cc.y1);
    cc.y1r = nn::relu(cc.y1n);
    cc.y2 = c2.forward(cc.y1r);
    cc.y2n = n2.forward(cc.y2);
    if (proj) {
      cc.sp = cp.forward(x);
      cc.spn = np.forward(cc.sp);
      cc.pre = cc.y2n;
      cc.pre.add(cc.spn);
    } else {
      cc.pre = cc.y2n;
      cc.pre.add(x);
    }
    return nn::relu(cc.pre);
  }

  Tensor backward(const Cache& cc, const Tensor& dy) {
    Tensor dpre = nn::relu_backward(cc.pre, dy);
    Tensor dy2 = n2.backward(cc.y2, dpre);
    Tensor dy1r = c2.backward(cc.y1r, dy2);
    Tensor dy1n = nn::relu_backward(cc.y1n, dy1r);
    Tensor dy1 = n1.backward(cc.y1, dy1n);
    Tensor dx = c1.backward(cc.x, dy1);
    if (proj) {
      Tensor dsp = np.backward(cc.sp, dpre);
      Tensor dxp = cp.backward(cc.x, dsp);
      dx.add(dxp);
    } else {
      dx.add(dpre);
    }
    return dx;
  }

  void update_stats(const Cache& cc, double momentum) {
    n1.update_stats(cc.y1, momentum);
    n2.update_stats(cc.y2, momentum);
    if (proj) np.update_stats(cc.sp, momentum);
  }

  void collect(nn::ParamRefs& ps) {
    c1.collect(ps);
    n1.collect(ps);
    c2.collect(ps);
    n2.collect(ps);
    if (proj) {
      cp.collect(ps);
      np.collect(ps);
    }
  }
};

// x2 downscaling neck: pooled shortcut plus a learned branch whose final conv
// starts at zero, so a fresh neck is exactly 2x2 average pooling.
struct Neck {
  nn::Conv2d c1, c2;

  struct Cache {
    Tensor x, b1, b1r;
  };

  Neck() = default;
  Neck(const std::string& name, int c)
      : c1(name + ".c1", c, c, 3, 2, 1), c2(name + ".c2", c, c, 3, 1, 1, nn::Init::Zero) {}

  Tensor forward(const Tensor& x, Cache& cc) const {
    cc.x = x;
    cc.b1 = c1.forward(x);
    cc.b1r = nn::relu(cc.b1);
    Tensor out = nn::avgpool2_ceil(x);
    Tensor branch = c2.forward(cc.b1r);
    out.add(branch);
    return out;
  }

  Tensor backward(const Cache& cc, const Tensor& dy) {
    Tensor dx = nn::avgpool2_ceil_backward(cc.x.h, cc.x.w, dy);
    Tensor db1r = c2.backward(cc.b1r, dy);
    Tensor db1 = nn::relu_backward(cc.b1, db1r);
    Tensor dxb = c1.backward(cc.x, db1);
    dx.add(dxb);
    return dx;
  }

  void collect(nn::ParamRefs& ps) {
    c1.collect(ps);
    c2.collect(ps);
  }
};

// ---------------------------------------------------------------------------
// Backbone: split stage a (stride 8) feeding two stage-b streams (/2 and /3),
// lateral 1x1 projections to the common channel count, then neck chains.
// ---------------------------------------------------------------------------

struct Backbone {
  BackboneConfig cfg;
  std::vector<ResBlock> stage_a;
  std::vector<ResBlock> stage_b1, stage_b2;
  nn::Conv2d lat8, lat16, lat24;
  std::vector<Neck> necks1, necks2;  // 16->32->64->128 and 24->48->96(->192)
  Counter stage_a_calls;             // one-shot contract instrumentation

  struct Cache {
    std::vector<ResBlock::Cache> a, b1, b2;
    Tensor f8, fb1, fb2;                      // stage outputs (pre-lateral)
    std::vector<Neck::Cache> nk1, nk2;
    std::vector<Tensor> lvl1, lvl2;           // stream level maps incl. the lateral output
    Tensor lvl8;
  };

  Backbone() = default;

  explicit Backbone(const BackboneConfig& cfg_) : cfg(cfg_) {
    cfg.validate();
    auto make_stage = [&](std::vector<ResBlock>& dst, const std::string& prefix, int in_c,
                          int out_c, int stride, int count) {
      dst.emplace_back(prefix + ".0", in_c, out_c, stride);
      for (int i = 1; i < count; ++i)
        dst.emplace_back(prefix + "." + std::to_string(i), out_c, out_c, 1);
    };
    int c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2], c3 = cfg.channels[3];
    make_stage(stage_a, "backbone.a1", 3, c0, 2, cfg.blocks[0]);
    make_stage(stage_a, "backbone.a2", c0, c1, 2, cfg.blocks[1]);
    make_stage(stage_a, "backbone.a3", c1, c2, 2, cfg.blocks[2]);
    make_stage(stage_b1, "backbone.b1", c2, c3, 2, cfg.blocks[3]);
    make_stage(stage_b2, "backbone.b2", c2, c3, 3, cfg.blocks[3]);

    int cc = cfg.common_channels;
    if (cfg.has_s8()) lat8 = nn::Conv2d("backbone.lat8", c2, cc, 1, 1, 0);
    lat16 = nn::Conv2d("backbone.lat16", c3, cc, 1, 1, 0);
    lat24 = nn::Conv2d("backbone.lat24", c3, cc, 1, 1, 0);
    for (int i = 0; i < 3; ++i) necks1.emplace_back("backbone.neck1." + std::to_string(i), cc);
    int n2 = cfg.has_s192() ? 3 : 2;
    for (int i = 0; i < n2; ++i) necks2.emplace_back("backbone.neck2." + std::to_string(i), cc);
  }

  // Stride-8 features from the first backbone part (shared by both streams).
  Tensor forward_stage_a(const Tensor& image, std::vector<ResBlock::Cache>& caches) const {
    stage_a_calls.bump();
    caches.resize(stage_a.size());
    Tensor x = image;
    for (std::size_t i = 0; i < stage_a.size(); ++i) x = stage_a[i].forward(x, caches[i]);
    return x;
  }

  Tensor forward_stage_b(const Tensor& f8, int stream, std::vector<ResBlock::Cache>& caches) const {
    if (stream != 1 && stream != 2) throw ConfigError("stage b: stream must be 1 or 2");
    const auto& blocks = (stream == 1) ? stage_b1 : stage_b2;
    caches.resize(blocks.size());
    Tensor x = f8;
    for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, caches[i]);
    return x;
  }

  FeaturePyramid forward(const Tensor& image, Cache& cc) const {
    cc.f8 = forward_stage_a(image, cc.a);
    cc.fb1 = forward_stage_b(cc.f8, 1, cc.b1);
    cc.fb2 = forward_stage_b(cc.f8, 2, cc.b2);

    if (cfg.has_s8()) cc.lvl8 = lat8.forward(cc.f8);
    cc.lvl1.clear();
    cc.lvl2.clear();
    cc.nk1.assign(necks1.size(), {});
    cc.nk2.assign(necks2.size(), {});
    cc.lvl1.push_back(lat16.forward(cc.fb1));
    for (std::size_t i = 0; i < necks1.size(); ++i)
      cc.lvl1.push_back(necks1[i].forward(cc.lvl1.back(), cc.nk1[i]));
    cc.lvl2.push_back(lat24.forward(cc.fb2));
    for (std::size_t i = 0; i < necks2.size(); ++i)
      cc.lvl2.push_back(necks2[i].forward(cc.lvl2.back(), cc.nk2[i]));

    FeaturePyramid pyr;
    for (const ScaleSpec& spec : cfg.scales()) {
      const Tensor* t = nullptr;
      if (spec.stride == 8) {
        t = &cc.lvl8;
      } else if (spec.stream == 1) {
        int idx = 0;
        for (int s = 16; s < spec.stride; s *= 2) ++idx;
        t = &cc.lvl1[std::size_t(idx)];
      } else {
        int idx = 0;
        for (int s = 24; s < spec.stride; s *= 2) ++idx;
        t = &cc.lvl2[std::size_t(idx)];
      }
      pyr.levels.push_back(PyramidLevel{spec, FeatureMap{*t, spec.stride}});
    }
    return pyr;
  }

  // dlevels[i] pairs with scales()[i]; empty tensors mean no gradient there.
  void backward(const Cache& cc, const std::vector<Tensor>& dlevels) {
    auto scales = cfg.scales();
    Tensor dlvl8;
    std::vector<Tensor> dlvl1(cc.lvl1.size()), dlvl2(cc.lvl2.size());
    auto ensure = [](Tensor& dst, const Tensor& like) {
      if (dst.v.empty()) dst = Tensor(like.h, like.w, like.c);
    };
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (dlevels[i].v.empty()) continue;
      const ScaleSpec& spec = scales[i];
      if (spec.stride == 8) {
        ensure(dlvl8, cc.lvl8);
        dlvl8.add(dlevels[i]);
      } else if (spec.stream == 1) {
        int idx = 0;
        for (int s = 16; s < spec.stride; s *= 2) ++idx;
        ensure(dlvl1[std::size_t(idx)], cc.lvl1[std::size_t(idx)]);
        dlvl1[std::size_t(idx)].add(dlevels[i]);
      } else {
        int idx = 0;
        for (int s = 24; s < spec.stride; s *= 2) ++idx;
        ensure(dlvl2[std::size_t(idx)], cc.lvl2[std::size_t(idx)]);
        dlvl2[std::size_t(idx)].add(dlevels[i]);
      }
    }

    // Reverse neck chains into the stream roots.
    for (int i = int(necks2.size()) - 1; i >= 0; --i) {
      if (dlvl2[std::size_t(i) + 1].v.empty()) continue;
      Tensor dprev = necks2[std::size_t(i)].backward(cc.nk2[std::size_t(i)],
                                                     dlvl2[std::size_t(i) + 1]);
      ensure(dlvl2[std::size_t(i)], cc.lvl2[std::size_t(i)]);
      dlvl2[std::size_t(i)].add(dprev);
    }
    for (int i = int(necks1.size()) - 1; i >= 0; --i) {
      if (dlvl1[std::size_t(i) + 1].v.empty()) continue;
      Tensor dprev = necks1[std::size_t(i)].backward(cc.nk1[std::size_t(i)],
                                                     dlvl1[std::size_t(i) + 1]);
      ensure(dlvl1[std::size_t(i)], cc.lvl1[std::size_t(i)]);
      dlvl1[std::size_t(i)].add(dprev);
    }

    Tensor df8(cc.f8.h, cc.f8.w, cc.f8.c);
    if (!dlvl1[0].v.empty()) {
      Tensor dfb1 = lat16.backward(cc.fb1, dlvl1[0]);
      Tensor d = dfb1;
      for (int i = int(stage_b1.size()) - 1; i >= 0; --i)
        d = stage_b1[std::size_t(i)].backward(cc.b1[std::size_t(i)], d);
      df8.add(d);
    }
    if (!dlvl2[0].v.empty()) {
      Tensor dfb2 = lat24.backward(cc.fb2, dlvl2[0]);
      Tensor d = dfb2;
      for (int i = int(stage_b2.size()) - 1; i >= 0; --i)
        d = stage_b2[std::size_t(i)].backward(cc.b2[std::size_t(i)], d);
      df8.add(d);
    }
    if (!dlvl8.v.empty()) {
      Tensor d8 = lat8.backward(cc.f8, dlvl8);
      df8.add(d8);
    }
    Tensor d = df8;
    for (int i = int(stage_a.size()) - 1; i >= 0; --i)
      d = stage_a[std::size_t(i)].backward(cc.a[std::size_t(i)], d);
  }

  void update_stats(const Cache& cc, double momentum) {
    for (std::size_t i = 0; i < stage_a.size(); ++i) stage_a[i].update_stats(cc.a[i], momentum);
    for (std::size_t i = 0; i < stage_b1.size(); ++i) stage_b1[i].update_stats(cc.b1[i], momentum);
    for (std::size_t i = 0; i < stage_b2.size(); ++i) stage_b2[i].update_stats(cc.b2[i], momentum);
  }

  void collect(nn::ParamRefs& ps) {
    for (auto& b : stage_a) b.collect(ps);
    for (auto& b : stage_b1) b.collect(ps);
    for (auto& b : stage_b2) b.collect(ps);
    if (cfg.has_s8()) lat8.collect(ps);
    lat16.collect(ps);
    lat24.collect(ps);
    for (auto& n : necks1) n.collect(ps);
    for (auto& n : necks2) n.collect(ps);
  }
};

// Reflect-pads the bottom/right edges so both sides reach at least
// `min_side`. Top-left coordinates are preserved, so outputs remain in
// original-image space.
inline Tensor pad_to_min_side(const Tensor& image, int min_side) {
  if (image.h >= min_side && image.w >= min_side) return image;
  if (image.h < 2 || image.w < 2) throw ShapeError("image too small to pad");
  int H = std::max(image.h, min_side), W = std::max(image.w, min_side);
  Tensor out(H, W, image.c);
  for (int y = 0; y < H; ++y) {
    int sy = y < image.h ? y : 2 * image.h - 2 - (y % (2 * image.h - 2));
    sy = std::clamp(std::abs(sy), 0, image.h - 1);
    for (int x = 0; x < W; ++x) {
      int sx = x < image.w ? x : 2 * image.w - 2 - (x % (2 * image.w - 2));
      sx = std::clamp(std::abs(sx), 0, image.w - 1);
      for (int ch = 0; ch < image.c; ++ch) out.at(y, x, ch) = image.at(sy, sx, ch);
    }
  }
  return out;
}

}  // namespace am
