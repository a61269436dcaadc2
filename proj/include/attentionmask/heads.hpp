#pragma once

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"
#include "attentionmask/image.hpp"
#include "attentionmask/nn.hpp"
#include "attentionmask/rle.hpp"
#include "attentionmask/sampler.hpp"

namespace am {

struct HeadsConfig {
  int k = 100;                 // windows forwarded to the attentional/seg heads
  int mask_size = 40;          // M; fixed at 4x window_size by the decoder
  double bin_threshold = 0.5;  // mask binarization
  bool nms = false;            // optional box-level NMS, off by default
  double nms_iou = 0.7;

  void validate(int window_size) const {
    if (k < 1) throw ConfigError("heads: k must be >= 1");
    if (mask_size != 4 * window_size)
      throw ConfigError("heads: mask_size must equal 4*window_size (two x2 decoder stages)");
    if (bin_threshold < 0.0 || bin_threshold > 1.0)
      throw ConfigError("heads: bin_threshold must be in [0,1]");
  }
};

// Probability that an object is centered and fully contained in the window.
struct ObjectnessScore {
  double value = 0.0;
};

struct SegmentationOutput {
  Tensor logits;  // M x M x 1
};

struct Proposal {
  Mask2D mask;  // image-size canvas, nonzero only inside the clipped rect
  ObjectnessScore score;
  WindowRef source;
};

// ---------------------------------------------------------------------------
// Objectness scoring: two 3x3 convs, global average pooling, linear, sigmoid.
// The final layer starts at zero so a fresh head scores 0.5 everywhere.
// ---------------------------------------------------------------------------

struct ObjectnessHead {
  nn::Conv2d c1, c2;
  nn::Linear fc;

  struct Cache {
    Tensor x, z1, z1r, z2, z2r;
    std::vector<double> pooled;
  };

  ObjectnessHead() = default;
  explicit ObjectnessHead(int c)
      : c1("objn.c1", c, c, 3, 1, 1), c2("objn.c2", c, c, 3, 1, 1),
        fc("objn.fc", c, 1, nn::Init::Zero) {}

  double forward_logit(const Tensor& window, Cache& cc) const {
    cc.x = window;
    cc.z1 = c1.forward(window);
    cc.z1r = nn::relu(cc.z1);
    cc.z2 = c2.forward(cc.z1r);
    cc.z2r = nn::relu(cc.z2);
    cc.pooled = nn::global_avgpool(cc.z2r);
    return fc.forward(cc.pooled)[0];
  }

  ObjectnessScore score(const Tensor& window) const {
    Cache cc;
    return ObjectnessScore{nn::sigmoid(forward_logit(window, cc))};
  }

  Tensor backward(const Cache& cc, double dlogit) {
    std::vector<double> dpooled = fc.backward(cc.pooled, {dlogit});
    Tensor dz2r = nn::global_avgpool_backward(cc.z2r.h, cc.z2r.w, dpooled);
    Tensor dz2 = nn::relu_backward(cc.z2, dz2r);
    Tensor dz1r = c2.backward(cc.z1r, dz2);
    Tensor dz1 = nn::relu_backward(cc.z1, dz1r);
    return c1.backward(cc.x, dz1);
  }

  void collect(nn::ParamRefs& ps) {
    c1.collect(ps);
    c2.collect(ps);
    fc.collect(ps);
  }
};

// ---------------------------------------------------------------------------
// Attentional head: 1x1 conv to a spatial logit map; sigmoid gate multiplies
// every channel. Prunes background features inside the window.
// ---------------------------------------------------------------------------

struct AttentionalHead {
  nn::Conv2d c1;

  struct Cache {
    Tensor x, logits;  // logits: ws x ws x 1
  };

  AttentionalHead() = default;
  explicit AttentionalHead(int c) : c1("ah.c1", c, 1, 1, 1, 0, nn::Init::Zero) {}

  // Returns the gated window; cc.logits carries the gate logits for the loss.
  Tensor forward(const Tensor& window, Cache& cc) const {
    cc.x = window;
    cc.logits = c1.forward(window);
    Tensor out(window.h, window.w, window.c);
    for (int y = 0; y < window.h; ++y)
      for (int x = 0; x < window.w; ++x) {
        double g = nn::sigmoid(cc.logits.at(y, x, 0));
        for (int ch = 0; ch < window.c; ++ch) out.at(y, x, ch) = window.at(y, x, ch) * g;
      }
    return out;
  }

  // dweighted: gradient on the gated window; dlogits_loss: optional direct
  // gradient on the gate logits (attentional-head supervision).
  Tensor backward(const Cache& cc, const Tensor& dweighted, const Tensor* dlogits_loss) {
    Tensor dlogits(cc.logits.h, cc.logits.w, 1);
    Tensor dwin(cc.x.h, cc.x.w, cc.x.c);
    for (int y = 0; y < cc.x.h; ++y)
      for (int x = 0; x < cc.x.w; ++x) {
        double g = nn::sigmoid(cc.logits.at(y, x, 0));
        double dgate = 0.0;
        for (int ch = 0; ch < cc.x.c; ++ch) {
          dwin.at(y, x, ch) += dweighted.at(y, x, ch) * g;
          dgate += dweighted.at(y, x, ch) * cc.x.at(y, x, ch);
        }
        double d = dgate * g * (1.0 - g);
        if (dlogits_loss) d += dlogits_loss->at(y, x, 0);
        dlogits.at(y, x, 0) = d;
      }
    Tensor dwin2 = c1.backward(cc.x, dlogits);
    dwin.add(dwin2);
    return dwin;
  }

  void collect(nn::ParamRefs& ps) { c1.collect(ps); }
};

// ---------------------------------------------------------------------------
// Segmentation decoder: two x2 deconvolution stages (ws -> 2ws -> 4ws) and a
// 1x1 output conv, zero-initialized.
// ---------------------------------------------------------------------------

struct SegHead {
  nn::Deconv2x d1, d2;
  nn::Conv2d out;

  struct Cache {
    Tensor x, u1, u1r, u2, u2r;
  };

  SegHead() = default;
  explicit SegHead(int c)
      : d1("seg.d1", c, c), d2("seg.d2", c, c), out("seg.out", c, 1, 1, 1, 0, nn::Init::Zero) {}

  Tensor forward_logits(const Tensor& weighted_window, Cache& cc) const {
    cc.x = weighted_window;
    cc.u1 = d1.forward(weighted_window);
    cc.u1r = nn::relu(cc.u1);
    cc.u2 = d2.forward(cc.u1r);
    cc.u2r = nn::relu(cc.u2);
    return out.forward(cc.u2r);
  }

  SegmentationOutput segment(const Tensor& weighted_window) const {
    Cache cc;
    return SegmentationOutput{forward_logits(weighted_window, cc)};
  }

  Tensor backward(const Cache& cc, const Tensor& dlogits) {
    Tensor du2r = out.backward(cc.u2r, dlogits);
    Tensor du2 = nn::relu_backward(cc.u2, du2r);
    Tensor du1r = d2.backward(cc.u1r, du2);
    Tensor du1 = nn::relu_backward(cc.u1, du1r);
    return d1.backward(cc.x, du1);
  }

  void collect(nn::ParamRefs& ps) {
    d1.collect(ps);
    d2.collect(ps);
    out.collect(ps);
  }
};

// ---------------------------------------------------------------------------
// Proposal assembly
// ---------------------------------------------------------------------------

// logits -> probabilities -> bilinear resize to the window's image rect ->
// threshold -> paste into an H x W canvas, clipped at the borders.
inline Proposal assemble_proposal(const SegmentationOutput& seg, const WindowRef& ref,
                                  ObjectnessScore score, int image_h, int image_w,
                                  double bin_threshold = 0.5) {
  const Tensor& lg = seg.logits;
  std::vector<double> probs(std::size_t(lg.h) * lg.w);
  for (int y = 0; y < lg.h; ++y)
    for (int x = 0; x < lg.w; ++x)
      probs[std::size_t(y) * lg.w + x] = nn::sigmoid(lg.at(y, x, 0));

  Proposal p;
  p.score = score;
  p.source = ref;
  p.mask = Mask2D(image_h, image_w);
  BBox rect = ref.image_rect();
  int y0 = std::max(0, rect.y), y1 = std::min(image_h, rect.y + rect.h);
  int x0 = std::max(0, rect.x), x1 = std::min(image_w, rect.x + rect.w);
  double sy = double(lg.h) / rect.h, sx = double(lg.w) / rect.w;
  for (int py = y0; py < y1; ++py) {
    double gy = (py - rect.y + 0.5) * sy - 0.5;
    for (int px = x0; px < x1; ++px) {
      double gx = (px - rect.x + 0.5) * sx - 0.5;
      if (bilinear_at(probs, lg.h, lg.w, gy, gx) >= bin_threshold) p.mask.set(py, px);
    }
  }
  return p;
}

// Descending by score; ties by attention, then coarser stride, then
// row-major, which makes the output order permutation-invariant.
inline std::vector<std::pair<WindowRef, ObjectnessScore>> select_top_windows(
    std::vector<std::pair<WindowRef, ObjectnessScore>> scored, int k) {
  if (k < 1) throw ConfigError("select_top_windows: k must be >= 1");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second.value != b.second.value) return a.second.value > b.second.value;
    return detail::rank_less(a.first, b.first);
  });
  if (int(scored.size()) > k) scored.resize(std::size_t(k));
  return scored;
}

// Optional box-level suppression on final proposals (boxes from mask extents,
// falling back to the clipped window rect for empty masks).
inline std::vector<Proposal> nms_proposals(std::vector<Proposal> props, double iou_threshold,
                                           int image_h, int image_w) {
  auto box_of = [&](const Proposal& p) -> BBox {
    if (!p.mask.empty()) return p.mask.tight_bbox();
    BBox r = p.source.image_rect();
    int x0 = std::max(0, r.x), y0 = std::max(0, r.y);
    int x1 = std::min(image_w, r.x + r.w), y1 = std::min(image_h, r.y + r.h);
    return BBox{x0, y0, std::max(1, x1 - x0), std::max(1, y1 - y0)};
  };
  auto iou = [](const BBox& a, const BBox& b) {
    int ix0 = std::max(a.x, b.x), iy0 = std::max(a.y, b.y);
    int ix1 = std::min(a.x + a.w, b.x + b.w), iy1 = std::min(a.y + a.h, b.y + b.h);
    long long inter = std::max(0, ix1 - ix0) * (long long)std::max(0, iy1 - iy0);
    long long uni = (long long)a.w * a.h + (long long)b.w * b.h - inter;
    return uni > 0 ? double(inter) / double(uni) : 0.0;
  };
  std::vector<Proposal> kept;
  std::vector<BBox> boxes;
  for (auto& p : props) {
    BBox pb = box_of(p);
    bool drop = false;
    for (const auto& kb : boxes)
      if (iou(pb, kb) > iou_threshold) {
        drop = true;
        break;
      }
    if (!drop) {
      boxes.push_back(pb);
      kept.push_back(std::move(p));
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Proposal wire format: JSON array of {image_id, score, rle}.
// ---------------------------------------------------------------------------

struct ProposalRecord {
  std::string image_id;
  double score = 0.0;
  Rle rle;
};

inline nlohmann::json proposal_records_json(const std::vector<ProposalRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& rec : records) {
    arr.push_back({{"image_id", rec.image_id},
                   {"score", rec.score},
                   {"rle", {{"size", {rec.rle.h, rec.rle.w}}, {"counts", rec.rle.counts}}}});
  }
  return arr;
}

inline void write_proposals(const std::string& path, const std::vector<ProposalRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << proposal_records_json(records).dump(2) << "\n";
}

inline std::vector<ProposalRecord> read_proposals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed proposals JSON: " + std::string(e.what()));
  }
  std::vector<ProposalRecord> records;
  for (const auto& js : arr) {
    ProposalRecord rec;
    rec.image_id = js.at("image_id").get<std::string>();
    rec.score = js.at("score").get<double>();
    rec.rle.h = js.at("rle").at("size")[0].get<int>();
    rec.rle.w = js.at("rle").at("size")[1].get<int>();
    rec.rle.counts = js.at("rle").at("counts").get<std::vector<std::int64_t>>();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace am
