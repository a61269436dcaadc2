#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"
#include "attentionmask/dataset.hpp"
#include "attentionmask/model.hpp"
#include "attentionmask/sampler.hpp"
#include "attentionmask/soam.hpp"

namespace am {

struct LossWeights {
  double objn = 0.5;
  double ah = 1.25;
  double seg = 1.25;
  double att = 0.25;

  void validate() const {
    if (objn < 0 || ah < 0 || seg < 0 || att < 0)
      throw ConfigError("loss weights must be >= 0");
  }
};

struct LossBreakdown {
  double objn = 0.0, ah = 0.0, seg = 0.0;
  std::vector<std::pair<std::string, double>> att_per_scale;  // stride-ascending
  double total = 0.0;

  double att_sum() const {
    double s = 0.0;
    for (const auto& [name, v] : att_per_scale) s += v;
    return s;
  }

  bool finite() const {
    return std::isfinite(objn) && std::isfinite(ah) && std::isfinite(seg) &&
           std::isfinite(att_sum()) && std::isfinite(total);
  }
};

// The one place the weighted sum is written down; everything else reuses it
// so the total stays a same-precision identity.
inline double weighted_total(double objn, double ah, double seg, double att_sum,
                             const LossWeights& w) {
  return w.objn * objn + w.ah * ah + w.seg * seg + w.att * att_sum;
}

// ---------------------------------------------------------------------------
// Window ground truth
// ---------------------------------------------------------------------------

struct WindowLabel {
  int objectness = 0;     // 1 iff a fitting object is centered and contained
  int target_index = -1;  // index into sample.objects when objectness == 1
  Mask2D ah_target;       // ws x ws bbox footprint
  Mask2D seg_target;      // M x M mask crop
};

namespace detail {
// Bilinear sample of a binary mask at fractional image coordinates;
// off-image reads as 0.
inline double mask_bilinear(const Mask2D& m, double y, double x) {
  int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  double fy = y - y0, fx = x - x0;
  auto at = [&m](int yy, int xx) -> double {
    if (yy < 0 || yy >= m.height() || xx < 0 || xx >= m.width()) return 0.0;
    return m.get(yy, xx) ? 1.0 : 0.0;
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}
}  // namespace detail

// objectness = 1 iff some object (a) fits the window's scale, (b) has its
// bbox fully inside the window rect, and (c) has its bbox center within the
// central 20% of the rect. The target is the candidate with the center
// nearest the window center (ties to the smaller object id). Center and
// distance comparisons use doubled integer coordinates, so they are exact.
inline WindowLabel assign_window_label(const WindowRef& ref, const ImageSample& sample) {
  WindowLabel label;
  const BBox rect = ref.image_rect();
  const int ws = ref.scale.window_size;
  const int M = 4 * ws;

  std::int64_t rcx2 = 2 * std::int64_t(rect.x) + rect.w;
  std::int64_t rcy2 = 2 * std::int64_t(rect.y) + rect.h;
  std::int64_t best_d2 = -1;
  for (std::size_t i = 0; i < sample.objects.size(); ++i) {
    const AnnotatedObject& o = sample.objects[i];
    if (!fits_scale(o, ref.scale)) continue;
    if (!rect.contains(o.bbox)) continue;
    std::int64_t bcx2 = 2 * std::int64_t(o.bbox.x) + o.bbox.w;
    std::int64_t bcy2 = 2 * std::int64_t(o.bbox.y) + o.bbox.h;
    if (5 * std::abs(bcx2 - rcx2) > rect.w || 5 * std::abs(bcy2 - rcy2) > rect.h) continue;
    std::int64_t d2 = (bcx2 - rcx2) * (bcx2 - rcx2) + (bcy2 - rcy2) * (bcy2 - rcy2);
    if (best_d2 < 0 || d2 < best_d2 ||
        (d2 == best_d2 && o.id < sample.objects[std::size_t(label.target_index)].id)) {
      best_d2 = d2;
      label.target_index = int(i);
    }
  }
  if (label.target_index < 0) return label;

  label.objectness = 1;
  const AnnotatedObject& target = sample.objects[std::size_t(label.target_index)];
  const int stride = ref.scale.stride;

  label.ah_target = Mask2D(ws, ws);
  for (int y = 0; y < ws; ++y)
    for (int x = 0; x < ws; ++x) {
      int fy0 = rect.y + y * stride, fy1 = fy0 + stride;
      int fx0 = rect.x + x * stride, fx1 = fx0 + stride;
      bool hit = target.bbox.x < fx1 && target.bbox.x + target.bbox.w > fx0 &&
                 target.bbox.y < fy1 && target.bbox.y + target.bbox.h > fy0;
      if (hit) label.ah_target.set(y, x);
    }

  label.seg_target = Mask2D(M, M);
  double sy = double(rect.h) / M, sx = double(rect.w) / M;
  for (int y = 0; y < M; ++y)
    for (int x = 0; x < M; ++x) {
      double py = rect.y + (y + 0.5) * sy - 0.5;
      double px = rect.x + (x + 0.5) * sx - 0.5;
      if (detail::mask_bilinear(target.mask, py, px) >= 0.5) label.seg_target.set(y, x);
    }
  return label;
}

// Convenience form: GT attention is built per pyramid level, then the pooled
// sampler runs on it.
inline WindowBatch sample_training_windows(const ImageSample& sample, const FeaturePyramid& pyr,
                                           int per_image_budget, double pos_fraction, Rng& rng) {
  std::vector<GtAttention> gts;
  std::vector<ScaleSpec> scales;
  for (const auto& lvl : pyr.levels) {
    gts.push_back(build_gt_attention(sample, lvl.spec, lvl.map.data.h, lvl.map.data.w));
    scales.push_back(lvl.spec);
  }
  return am::sample_training_windows(gts, scales, per_image_budget, pos_fraction, rng);
}

// ---------------------------------------------------------------------------
// Fixed step batch: every random choice is made here, before any forward
// pass, so the loss is a pure function of the parameters afterwards.
// ---------------------------------------------------------------------------

struct StepBatch {
  std::vector<ImageSample> images;  // flips already applied
  std::vector<WindowBatch> windows;
  // per image, aligned with attention_scales(): sampled attention cells
  std::vector<std::vector<std::vector<AttentionCell>>> att_cells;
};

inline std::vector<ScaleSpec> attention_scales(const Model& model) {
  auto scales = model.bcfg.scales();
  if (model.scfg.single_map) return {scales.front()};
  return scales;
}

inline std::vector<GtAttention> build_gt_for_model(const Model& model, const ImageSample& sample) {
  int H = std::max(sample.image.h, model.min_input_side());
  int W = std::max(sample.image.w, model.min_input_side());
  std::vector<GtAttention> gts;
  if (model.scfg.single_map) {
    auto scales = model.bcfg.scales();
    gts.push_back(build_gt_attention_union(sample, scales, ceil_div(H, scales.front().stride),
                                           ceil_div(W, scales.front().stride)));
    return gts;
  }
  for (const auto& spec : model.bcfg.scales())
    gts.push_back(
        build_gt_attention(sample, spec, ceil_div(H, spec.stride), ceil_div(W, spec.stride)));
  return gts;
}

struct TrainConfig {
  int epochs = 10;
  int batch_images = 1;
  int windows_per_image = 32;
  double pos_fraction = 0.5;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::int64_t seed = 0;
  LossWeights weights;
  bool augment = true;      // horizontal flip only
  double flip_prob = 0.5;
  // Running-stat refresh during training destabilized desk-scale runs; the
  // buffers stay at their calibration values unless this is enabled.
  double norm_momentum = 0.0;

  void validate() const {
    if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
    if (batch_images < 1) throw ConfigError("training: batch_images must be >= 1");
    if (windows_per_image < 1) throw ConfigError("training: windows_per_image must be >= 1");
    if (pos_fraction < 0.0 || pos_fraction > 1.0)
      throw ConfigError("training: pos_fraction must be in [0,1]");
    if (learning_rate <= 0.0) throw ConfigError("training: learning_rate must be > 0");
    weights.validate();
  }
};

inline StepBatch make_step_batch(const Model& model,
                                 const std::vector<const ImageSample*>& samples, Rng& rng,
                                 const TrainConfig& cfg, bool allow_flip) {
  StepBatch batch;
  for (const ImageSample* src : samples) {
    bool flip = allow_flip && cfg.augment && rng.uniform() < cfg.flip_prob;
    batch.images.push_back(flip ? src->flipped_horizontal() : *src);
  }
  for (const auto& sample : batch.images) {
    std::vector<GtAttention> att_gts = build_gt_for_model(model, sample);
    std::vector<std::vector<AttentionCell>> cells;
    for (const auto& gt : att_gts) cells.push_back(sample_attention_cells(gt, rng));
    batch.att_cells.push_back(std::move(cells));

    // Window sampling always uses per-scale ground truth (never predictions),
    // including in the single-map ablation.
    std::vector<GtAttention> win_gts;
    std::vector<ScaleSpec> scales = model.bcfg.scales();
    int H = std::max(sample.image.h, model.min_input_side());
    int W = std::max(sample.image.w, model.min_input_side());
    for (const auto& spec : scales)
      win_gts.push_back(
          build_gt_attention(sample, spec, ceil_div(H, spec.stride), ceil_div(W, spec.stride)));
    batch.windows.push_back(am::sample_training_windows(win_gts, scales, cfg.windows_per_image,
                                                        cfg.pos_fraction, rng));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// One optimization step's loss (and optionally parameter gradients).
// ---------------------------------------------------------------------------

inline LossBreakdown compute_step(Model& model, const StepBatch& batch, const LossWeights& w,
                                  bool do_backward, double norm_momentum = 0.0) {
  const auto att_specs = attention_scales(model);
  const auto all_scales = model.bcfg.scales();
  const int ws = model.bcfg.window_size;
  const int M = 4 * ws;

  struct WindowCtx {
    WindowRef ref;
    WindowLabel label;
    Tensor win;
    ObjectnessHead::Cache objn_cc;
    double objn_logit = 0.0;
    AttentionalHead::Cache ah_cc;
    Tensor weighted;
    SegHead::Cache seg_cc;
    Tensor seg_logits;
  };
  struct ImageCtx {
    Backbone::Cache bc;
    FeaturePyramid pyr;
    std::vector<Soam::Cache> soam_cc;
    std::vector<Tensor> soam_logits;
    std::vector<WindowCtx> windows;
  };

  const std::size_t n_images = batch.images.size();
  std::vector<ImageCtx> ctxs(n_images);
  double objn_sum = 0.0, ah_sum = 0.0, seg_sum = 0.0;
  long n_windows = 0, n_pos = 0;
  std::vector<double> att_sums(att_specs.size(), 0.0);

  for (std::size_t ii = 0; ii < n_images; ++ii) {
    const ImageSample& sample = batch.images[ii];
    ImageCtx& ctx = ctxs[ii];
    if (batch.windows[ii].origin != WindowOrigin::GroundTruth)
      throw ConfigError("training must sample windows from ground-truth attention");

    Tensor input = model.prepare_image(sample.image);
    ctx.pyr = model.backbone.forward(input, ctx.bc);

    ctx.soam_cc.resize(att_specs.size());
    for (std::size_t si = 0; si < att_specs.size(); ++si) {
      int li = ctx.pyr.index_of_stride(att_specs[si].stride);
      ctx.soam_logits.push_back(
          model.soam.forward_logits(ctx.pyr.levels[std::size_t(li)].map.data, ctx.soam_cc[si]));
      att_sums[si] +=
          attention_loss_on_cells(ctx.soam_logits[si], batch.att_cells[ii][si]);
    }

    for (const auto& wref : batch.windows[ii].windows) {
      WindowCtx wctx;
      wctx.ref = wref;
      wctx.label = assign_window_label(wref, sample);
      const FeatureMap& fm =
          ctx.pyr.levels[std::size_t(ctx.pyr.index_of_stride(wref.scale.stride))].map;
      wctx.win = extract_window(fm, wref);
      wctx.objn_logit = model.objn.forward_logit(wctx.win, wctx.objn_cc);
      objn_sum += nn::bce_with_logits(wctx.objn_logit, double(wctx.label.objectness));
      ++n_windows;
      if (wctx.label.objectness == 1) {
        ++n_pos;
        wctx.weighted = model.ah.forward(wctx.win, wctx.ah_cc);
        wctx.seg_logits = model.seg.forward_logits(wctx.weighted, wctx.seg_cc);
        double ah_cell_sum = 0.0;
        for (int y = 0; y < ws; ++y)
          for (int x = 0; x < ws; ++x)
            ah_cell_sum += nn::bce_with_logits(wctx.ah_cc.logits.at(y, x, 0),
                                               wctx.label.ah_target.get(y, x) ? 1.0 : 0.0);
        ah_sum += ah_cell_sum / double(ws * ws);
        double seg_cell_sum = 0.0;
        for (int y = 0; y < M; ++y)
          for (int x = 0; x < M; ++x)
            seg_cell_sum += nn::bce_with_logits(wctx.seg_logits.at(y, x, 0),
                                                wctx.label.seg_target.get(y, x) ? 1.0 : 0.0);
        seg_sum += seg_cell_sum / double(M * M);
      }
      ctx.windows.push_back(std::move(wctx));
    }
  }

  LossBreakdown loss;
  loss.objn = n_windows > 0 ? objn_sum / double(n_windows) : 0.0;
  loss.ah = n_pos > 0 ? ah_sum / double(n_pos) : 0.0;
  loss.seg = n_pos > 0 ? seg_sum / double(n_pos) : 0.0;
  for (std::size_t si = 0; si < att_specs.size(); ++si)
    loss.att_per_scale.emplace_back(att_specs[si].name, att_sums[si] / double(n_images));
  loss.total = weighted_total(loss.objn, loss.ah, loss.seg, loss.att_sum(), w);

  if (!do_backward) return loss;

  for (std::size_t ii = 0; ii < n_images; ++ii) {
    ImageCtx& ctx = ctxs[ii];
    std::vector<Tensor> dlevels(all_scales.size());
    auto dlevel_at = [&](int stride) -> Tensor& {
      std::size_t li = std::size_t(ctx.pyr.index_of_stride(stride));
      if (dlevels[li].v.empty()) {
        const Tensor& like = ctx.pyr.levels[li].map.data;
        dlevels[li] = Tensor(like.h, like.w, like.c);
      }
      return dlevels[li];
    };

    for (std::size_t si = 0; si < att_specs.size(); ++si) {
      const Tensor& logits = ctx.soam_logits[si];
      Tensor dlogits(logits.h, logits.w, 2);
      attention_loss_grad_on_cells(logits, batch.att_cells[ii][si], w.att / double(n_images),
                                   dlogits);
      Tensor dfeat = model.soam.backward(ctx.soam_cc[si], dlogits);
      dlevel_at(att_specs[si].stride).add(dfeat);
    }

    for (WindowCtx& wctx : ctx.windows) {
      double dlogit = w.objn *
                      nn::bce_with_logits_grad(wctx.objn_logit, double(wctx.label.objectness)) /
                      double(n_windows);
      Tensor dwin = model.objn.backward(wctx.objn_cc, dlogit);
      if (wctx.label.objectness == 1) {
        Tensor dseg(M, M, 1);
        double seg_scale = w.seg / (double(M * M) * double(n_pos));
        for (int y = 0; y < M; ++y)
          for (int x = 0; x < M; ++x)
            dseg.at(y, x, 0) =
                seg_scale * nn::bce_with_logits_grad(wctx.seg_logits.at(y, x, 0),
                                                     wctx.label.seg_target.get(y, x) ? 1.0 : 0.0);
        Tensor dweighted = model.seg.backward(wctx.seg_cc, dseg);
        Tensor dah(ws, ws, 1);
        double ah_scale = w.ah / (double(ws * ws) * double(n_pos));
        for (int y = 0; y < ws; ++y)
          for (int x = 0; x < ws; ++x)
            dah.at(y, x, 0) =
                ah_scale * nn::bce_with_logits_grad(wctx.ah_cc.logits.at(y, x, 0),
                                                    wctx.label.ah_target.get(y, x) ? 1.0 : 0.0);
        Tensor dwin2 = model.ah.backward(wctx.ah_cc, dweighted, &dah);
        dwin.add(dwin2);
      }
      scatter_window_grad(dwin, wctx.ref, dlevel_at(wctx.ref.scale.stride));
    }

    model.backbone.backward(ctx.bc, dlevels);
    if (norm_momentum > 0.0) model.backbone.update_stats(ctx.bc, norm_momentum);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainingDiverged : std::runtime_error {
  int epoch = 0, step = 0;
  TrainingDiverged(int epoch_, int step_)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_) + " step " +
                           std::to_string(step_)),
        epoch(epoch_), step(step_) {}
};

struct EpochMetrics {
  int epoch = 0;
  double objn = 0.0, ah = 0.0, seg = 0.0, att_total = 0.0, total = 0.0;
  double wall_seconds = 0.0;
};

struct StepInfo {
  int epoch = 0, step = 0;
  LossBreakdown loss;
  LossWeights weights;
  double grad_norm = 0.0;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os << "epoch,objn,ah,seg,att_total,total,wall_seconds\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << r.objn << ',' << r.ah << ',' << r.seg << ',' << r.att_total << ','
       << r.total << ',' << r.wall_seconds << '\n';
  return os.str();
}

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
    cfg_.validate();
    sgd_.lr = cfg_.learning_rate;
    sgd_.momentum = cfg_.momentum;
    sgd_.clip_norm = cfg_.clip_norm;
  }

  // Per-step: pyramid forward, SOAM losses on all active maps, GT-sampled
  // windows, head losses, weighted sum, SGD step. The weighted-sum identity
  // is asserted on every step. `progress`, when given, receives each epoch
  // row as it completes, so partial logs survive a divergence abort.
  std::vector<EpochMetrics> run(const DatasetManifest& data,
                                const std::function<void(const StepInfo&)>& on_step = {},
                                std::vector<EpochMetrics>* progress = nullptr) {
    if (data.samples.empty()) throw ConfigError("training: empty dataset");
    Rng rng(std::uint64_t(cfg_.seed) ^ 0x7261696e21ULL);
    std::vector<EpochMetrics> metrics;
    nn::ParamRefs params = model_.params();

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(data.samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);

      EpochMetrics em;
      em.epoch = epoch;
      int steps = 0;
      for (std::size_t pos = 0; pos < order.size(); pos += std::size_t(cfg_.batch_images)) {
        std::vector<const ImageSample*> chunk;
        for (std::size_t i = pos; i < std::min(order.size(), pos + std::size_t(cfg_.batch_images));
             ++i)
          chunk.push_back(&data.samples[order[i]]);
        StepBatch batch = make_step_batch(model_, chunk, rng, cfg_, /*allow_flip=*/true);

        for (nn::Param* p : params) p->zero_grad();
        LossBreakdown loss = compute_step(model_, batch, cfg_.weights, /*do_backward=*/true,
                                          cfg_.norm_momentum);
        if (!loss.finite()) throw TrainingDiverged(epoch, steps);
        if (loss.total !=
            weighted_total(loss.objn, loss.ah, loss.seg, loss.att_sum(), cfg_.weights))
          throw std::logic_error("loss total identity violated");
        double gnorm = sgd_.step(params);

        if (on_step) on_step(StepInfo{epoch, steps, loss, cfg_.weights, gnorm});
        em.objn += loss.objn;
        em.ah += loss.ah;
        em.seg += loss.seg;
        em.att_total += loss.att_sum();
        em.total += loss.total;
        ++steps;
      }
      double inv = steps > 0 ? 1.0 / steps : 0.0;
      em.objn *= inv;
      em.ah *= inv;
      em.seg *= inv;
      em.att_total *= inv;
      em.total *= inv;
      em.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      metrics.push_back(em);
      if (progress) progress->push_back(em);
    }
    return metrics;
  }

 private:
  Model& model_;
  TrainConfig cfg_;
  nn::Sgd sgd_;
};

}  // namespace am
