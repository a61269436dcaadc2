#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attentionmask/backbone.hpp"
#include "attentionmask/core.hpp"
#include "attentionmask/dataset.hpp"
#include "attentionmask/nn.hpp"

namespace am {

// Per-scale objectness probability grid.
struct AttentionMap {
  int h = 0, w = 0;
  std::vector<double> probs;  // object-class probability per cell
  ScaleSpec scale;

  double at(int r, int c) const { return probs[std::size_t(r) * w + c]; }
};

// Per-scale attention ground truth; -1 marks ignore cells (never produced by
// the builder here, but part of the label contract).
struct GtAttention {
  int h = 0, w = 0;
  std::vector<std::int8_t> labels;
  ScaleSpec scale;

  std::int8_t at(int r, int c) const { return labels[std::size_t(r) * w + c]; }
  int positive_count() const {
    int n = 0;
    for (auto l : labels) n += (l == 1);
    return n;
  }
};

// An object fits a scale iff both bbox sides are within 40%..80% of the
// window side length in image space. Evaluated in integers (2/5 and 4/5) so
// band boundaries are exact.
inline bool fits_scale(const AnnotatedObject& object, const ScaleSpec& scale) {
  int wpx = scale.window_px();
  auto in_band = [&](int side) { return 5 * side >= 2 * wpx && 5 * side <= 4 * wpx; };
  return in_band(object.bbox.w) && in_band(object.bbox.h);
}

enum class SoamDepth { Single, Hidden128, Hidden256 };

inline const char* soam_depth_name(SoamDepth d) {
  switch (d) {
    case SoamDepth::Single: return "single";
    case SoamDepth::Hidden128: return "d128";
    default: return "d256";
  }
}

inline SoamDepth soam_depth_from_name(const std::string& s) {
  if (s == "single") return SoamDepth::Single;
  if (s == "d128") return SoamDepth::Hidden128;
  if (s == "d256") return SoamDepth::Hidden256;
  throw ConfigError("unknown soam_depth: " + s);
}

struct SoamConfig {
  SoamDepth depth = SoamDepth::Hidden128;
  bool single_map = false;  // ablation: one attention map serves all scales
};

// Scale-specific objectness attention module. One instance is shared across
// all pyramid levels (the lateral projections give every level the same
// channel count). The final 4x4 conv uses the even-kernel alignment so cell
// (r,c) scores the window whose feature top-left is (r-4, c-4).
struct Soam {
  SoamConfig cfg;
  int in_c = 0, hidden = 0;
  nn::Conv2d conv1;  // 3x3, C -> hidden, ReLU (absent for Single)
  nn::Conv2d conv2;  // 4x4, -> 2 classes

  struct Cache {
    Tensor x, h1, h1r;
  };

  Soam() = default;
  Soam(const SoamConfig& cfg_, int in_c_) : cfg(cfg_), in_c(in_c_) {
    hidden = cfg.depth == SoamDepth::Hidden256 ? 256 : 128;
    if (cfg.depth == SoamDepth::Single) {
      conv2 = nn::Conv2d::make_even_aligned("soam.conv2", in_c, 2, 4, nn::Init::Zero);
    } else {
      conv1 = nn::Conv2d("soam.conv1", in_c, hidden, 3, 1, 1);
      conv2 = nn::Conv2d::make_even_aligned("soam.conv2", hidden, 2, 4, nn::Init::Zero);
    }
  }

  Tensor forward_logits(const Tensor& f, Cache& cc) const {
    if (f.c != in_c) throw ConfigError("soam: feature channels do not match");
    if (cfg.depth == SoamDepth::Single) {
      cc.x = f;
      return conv2.forward(f);
    }
    cc.x = f;
    cc.h1 = conv1.forward(f);
    cc.h1r = nn::relu(cc.h1);
    return conv2.forward(cc.h1r);
  }

  Tensor backward(const Cache& cc, const Tensor& dlogits) {
    if (cfg.depth == SoamDepth::Single) return conv2.backward(cc.x, dlogits);
    Tensor dh1r = conv2.backward(cc.h1r, dlogits);
    Tensor dh1 = nn::relu_backward(cc.h1, dh1r);
    return conv1.backward(cc.x, dh1);
  }

  void collect(nn::ParamRefs& ps) {
    if (cfg.depth != SoamDepth::Single) conv1.collect(ps);
    conv2.collect(ps);
  }
};

inline AttentionMap attention_from_logits(const Tensor& logits, const ScaleSpec& scale) {
  AttentionMap m;
  m.h = logits.h;
  m.w = logits.w;
  m.scale = scale;
  m.probs.resize(std::size_t(m.h) * m.w);
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c)
      m.probs[std::size_t(r) * m.w + c] = nn::softmax2_prob1(logits.at(r, c, 0), logits.at(r, c, 1));
  return m;
}

inline AttentionMap compute_attention(const FeatureMap& f, const Soam& soam,
                                      const ScaleSpec& scale) {
  Soam::Cache cc;
  Tensor logits = soam.forward_logits(f.data, cc);
  return attention_from_logits(logits, scale);
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

// Cell (r,c) is positive iff some object fitting this scale has a mask pixel
// inside the cell's image-space footprint (max-pool downsampling). Grid
// dimensions default to ceil(H/stride) but can be forced to match a padded
// feature map; cells beyond the image stay 0.
inline GtAttention build_gt_attention(const ImageSample& sample, const ScaleSpec& scale,
                                      int grid_h = -1, int grid_w = -1) {
  const int s = scale.stride;
  GtAttention gt;
  gt.scale = scale;
  gt.h = grid_h > 0 ? grid_h : ceil_div(sample.image.h, s);
  gt.w = grid_w > 0 ? grid_w : ceil_div(sample.image.w, s);
  gt.labels.assign(std::size_t(gt.h) * gt.w, 0);
  for (const auto& o : sample.objects) {
    if (!fits_scale(o, scale)) continue;
    int r0 = o.bbox.y / s, r1 = std::min(gt.h - 1, (o.bbox.y + o.bbox.h - 1) / s);
    int c0 = o.bbox.x / s, c1 = std::min(gt.w - 1, (o.bbox.x + o.bbox.w - 1) / s);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        if (gt.labels[std::size_t(r) * gt.w + c] == 1) continue;
        int y0 = r * s, y1 = std::min((r + 1) * s, sample.image.h);
        int x0 = c * s, x1 = std::min((c + 1) * s, sample.image.w);
        bool hit = false;
        for (int y = y0; y < y1 && !hit; ++y)
          for (int x = x0; x < x1 && !hit; ++x) hit = o.mask.get(y, x);
        if (hit) gt.labels[std::size_t(r) * gt.w + c] = 1;
      }
  }
  return gt;
}

// Single-map ablation ground truth: one grid at the finest active scale with
// positives for objects fitting any active scale.
inline GtAttention build_gt_attention_union(const ImageSample& sample,
                                            const std::vector<ScaleSpec>& scales, int grid_h = -1,
                                            int grid_w = -1) {
  if (scales.empty()) throw ConfigError("no scales");
  const ScaleSpec& finest = scales.front();
  GtAttention acc = build_gt_attention(sample, finest, grid_h, grid_w);
  for (const auto& sc : scales) {
    if (sc.stride == finest.stride) continue;
    // fit decided per scale sc, footprint rasterized on the finest grid
    for (const auto& o : sample.objects) {
      if (!fits_scale(o, sc)) continue;
      ImageSample one;
      one.image = sample.image;
      one.objects.push_back(o);
      GtAttention g = build_gt_attention(one, finest, acc.h, acc.w);
      for (std::size_t i = 0; i < acc.labels.size(); ++i)
        if (g.labels[i] == 1) acc.labels[i] = 1;
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Sampled attention loss
// ---------------------------------------------------------------------------

struct AttentionCell {
  int r = 0, c = 0;
  int label = 0;
};

// All positives plus 3 negatives per positive drawn uniformly without
// replacement (all negatives when fewer exist). Empty when there is no
// positive cell: such maps contribute zero loss.
inline std::vector<AttentionCell> sample_attention_cells(const GtAttention& gt, Rng& rng,
                                                         int negatives_per_positive = 3) {
  std::vector<AttentionCell> cells;
  std::vector<std::pair<int, int>> negatives;
  for (int r = 0; r < gt.h; ++r)
    for (int c = 0; c < gt.w; ++c) {
      std::int8_t l = gt.at(r, c);
      if (l == 1)
        cells.push_back({r, c, 1});
      else if (l == 0)
        negatives.emplace_back(r, c);
    }
  if (cells.empty()) return cells;
  std::size_t want = std::min(negatives.size(), cells.size() * std::size_t(negatives_per_positive));
  for (std::size_t i = 0; i < want; ++i) {
    std::size_t j = i + rng.next_u64() % (negatives.size() - i);
    std::swap(negatives[i], negatives[j]);
    cells.push_back({negatives[i].first, negatives[i].second, 0});
  }
  return cells;
}

inline double attention_loss_on_cells(const Tensor& logits,
                                      const std::vector<AttentionCell>& cells) {
  if (cells.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& cell : cells)
    sum += nn::softmax2_ce(logits.at(cell.r, cell.c, 0), logits.at(cell.r, cell.c, 1), cell.label);
  return sum / double(cells.size());
}

// Accumulates d(loss)/d(logits) into dlogits (same shape as logits).
inline void attention_loss_grad_on_cells(const Tensor& logits,
                                         const std::vector<AttentionCell>& cells, double weight,
                                         Tensor& dlogits) {
  if (cells.empty()) return;
  double inv = weight / double(cells.size());
  for (const auto& cell : cells) {
    double d0, d1;
    nn::softmax2_ce_grad(logits.at(cell.r, cell.c, 0), logits.at(cell.r, cell.c, 1), cell.label,
                         d0, d1);
    dlogits.at(cell.r, cell.c, 0) += d0 * inv;
    dlogits.at(cell.r, cell.c, 1) += d1 * inv;
  }
}

// The spec'd one-call form: sample with the provided source, then evaluate.
inline double attention_loss(const Tensor& pred_logits, const GtAttention& gt, Rng& rng) {
  if (pred_logits.h != gt.h || pred_logits.w != gt.w || pred_logits.c != 2)
    throw ShapeError("attention_loss: logits/gt shape mismatch");
  auto cells = sample_attention_cells(gt, rng);
  return attention_loss_on_cells(pred_logits, cells);
}

}  // namespace am
