#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"
#include "attentionmask/dataset.hpp"
#include "attentionmask/heads.hpp"
#include "attentionmask/model.hpp"

namespace am {

inline double mask_iou(const Mask2D& a, const Mask2D& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError("mask_iou: shape mismatch");
  int uni = Mask2D::union_area(a, b);
  if (uni == 0) return 0.0;  // both empty
  return double(Mask2D::intersection_area(a, b)) / double(uni);
}

// The standard threshold grid: 0.50, 0.55, ..., 0.95. Values are built from
// integer centi-units so grid points compare exactly against rational IoUs.
inline std::vector<double> iou_threshold_grid(int lo_centi = 50, int step_centi = 5,
                                              int count = 10) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) out.push_back(double(lo_centi + step_centi * i) / 100.0);
  return out;
}

// ---------------------------------------------------------------------------
// Matched-recall bookkeeping
// ---------------------------------------------------------------------------

// Per ground-truth object: prefix maximum of IoU against the ranked proposal
// list, so best-IoU@k is a single lookup for any k.
struct PerImageEval {
  std::vector<int> gt_areas;
  std::vector<std::vector<double>> prefix_best;  // [gt][j]: best IoU among first j+1 proposals

  double best_iou(std::size_t gt, int k) const {
    const auto& row = prefix_best[gt];
    if (row.empty() || k <= 0) return 0.0;
    std::size_t j = std::min(row.size(), std::size_t(k)) - 1;
    return row[j];
  }
};

inline PerImageEval evaluate_image(const ImageSample& sample,
                                   const std::vector<Mask2D>& ranked_masks) {
  PerImageEval ev;
  for (const auto& o : sample.objects) {
    ev.gt_areas.push_back(o.area);
    std::vector<double> prefix;
    prefix.reserve(ranked_masks.size());
    double best = 0.0;
    for (const auto& m : ranked_masks) {
      best = std::max(best, mask_iou(o.mask, m));
      prefix.push_back(best);
    }
    ev.prefix_best.push_back(std::move(prefix));
  }
  return ev;
}

struct RecallCounts {
  long matched = 0;
  long total = 0;
};

inline RecallCounts recall_counts(const std::vector<PerImageEval>& evals, int k, double threshold,
                                  std::optional<SizeBucket> bucket = std::nullopt) {
  RecallCounts rc;
  for (const auto& ev : evals)
    for (std::size_t g = 0; g < ev.gt_areas.size(); ++g) {
      if (bucket && size_bucket(ev.gt_areas[g]) != *bucket) continue;
      ++rc.total;
      if (ev.best_iou(g, k) >= threshold) ++rc.matched;
    }
  return rc;
}

// AR@k: mean over the IoU threshold grid of the fraction of ground truth
// whose best IoU among the image's top-k proposals clears the threshold.
// Returns NaN (with a warning) when no ground truth matches the filter.
inline double average_recall(const std::vector<PerImageEval>& evals, int k,
                             std::optional<SizeBucket> bucket = std::nullopt,
                             const std::vector<double>& thresholds = iou_threshold_grid()) {
  double sum = 0.0;
  long total = 0;
  for (double t : thresholds) {
    RecallCounts rc = recall_counts(evals, k, t, bucket);
    total = rc.total;
    if (rc.total > 0) sum += double(rc.matched) / double(rc.total);
  }
  if (total == 0) {
    std::cerr << "[warn] average_recall: no ground-truth objects"
              << (bucket ? std::string(" in bucket ") + bucket_name(*bucket) : std::string())
              << "; AR undefined\n";
    return std::nan("");
  }
  return sum / double(thresholds.size());
}

inline std::vector<std::pair<double, double>> recall_curve(
    const std::vector<PerImageEval>& evals, int k,
    const std::vector<double>& thresholds = iou_threshold_grid()) {
  std::vector<std::pair<double, double>> curve;
  for (double t : thresholds) {
    RecallCounts rc = recall_counts(evals, k, t);
    curve.emplace_back(t, rc.total > 0 ? double(rc.matched) / double(rc.total) : std::nan(""));
  }
  return curve;
}

struct EvalResult {
  std::vector<std::pair<int, double>> ar_at;              // k -> AR
  std::map<std::string, double> ar_bucket_at_100;         // small/medium/large
  std::vector<std::pair<double, double>> recall_curve;    // threshold -> recall@100
  long images = 0, gt_objects = 0, proposals = 0;

  // per-image detail: ground-truth count, proposals available (records the
  // shortfall when fewer than k were emitted), matches at IoU 0.5 in top-100
  struct ImageRow {
    std::string id;
    long gt = 0, proposals = 0, matched_50_at_100 = 0;
  };
  std::vector<ImageRow> per_image;
};

// Groups proposal records per image in manifest order, decodes masks, and
// computes the full report. Proposals must belong to manifest images.
inline EvalResult evaluate_proposals(const DatasetManifest& manifest,
                                     const std::vector<ProposalRecord>& records,
                                     const std::vector<int>& ks = {10, 100, 1000},
                                     const std::vector<double>& thresholds =
                                         iou_threshold_grid()) {
  std::map<std::string, std::vector<const ProposalRecord*>> by_image;
  for (const auto& rec : records) by_image[rec.image_id].push_back(&rec);

  std::vector<PerImageEval> evals;
  EvalResult result;
  result.images = long(manifest.samples.size());
  result.proposals = long(records.size());
  for (const auto& sample : manifest.samples) {
    result.gt_objects += long(sample.objects.size());
    std::vector<Mask2D> masks;
    auto it = by_image.find(sample.id);
    if (it != by_image.end()) {
      std::vector<const ProposalRecord*> recs = it->second;
      std::stable_sort(recs.begin(), recs.end(),
                       [](const ProposalRecord* a, const ProposalRecord* b) {
                         return a->score > b->score;
                       });
      for (const ProposalRecord* r : recs) {
        if (r->rle.h != sample.image.h || r->rle.w != sample.image.w)
          throw ShapeError("proposal mask size differs from image " + sample.id);
        masks.push_back(rle_decode(r->rle));
      }
    }
    evals.push_back(evaluate_image(sample, masks));

    EvalResult::ImageRow row;
    row.id = sample.id;
    row.gt = long(sample.objects.size());
    row.proposals = long(masks.size());
    for (std::size_t g = 0; g < evals.back().gt_areas.size(); ++g)
      row.matched_50_at_100 += evals.back().best_iou(g, 100) >= 0.5;
    result.per_image.push_back(std::move(row));
  }

  for (int k : ks) result.ar_at.emplace_back(k, average_recall(evals, k, std::nullopt, thresholds));
  for (SizeBucket b : {SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large})
    result.ar_bucket_at_100[bucket_name(b)] = average_recall(evals, 100, b, thresholds);
  result.recall_curve = recall_curve(evals, 100, thresholds);
  return result;
}

// ---------------------------------------------------------------------------
// Stage timing
// ---------------------------------------------------------------------------

struct TimingReport {
  StageSeconds median;  // per-stage medians
  int repetitions = 0;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n == 0 ? 0.0 : (n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}

// Wall-clock per stage, median over `reps` runs after one warm-up. Must be
// run single-threaded for stable numbers.
inline TimingReport timing_report(const Model& model, const ImageU8& image,
                                  const SamplerConfig& scfg, const HeadsConfig& hcfg,
                                  bool use_attention = true, int reps = 5) {
  if (reps < 1) throw ConfigError("timing_report: reps must be >= 1");
  run_inference(model, image, scfg, hcfg, use_attention);  // warm-up
  std::vector<double> base, soams, sampling, heads, total;
  for (int i = 0; i < reps; ++i) {
    InferenceResult r = run_inference(model, image, scfg, hcfg, use_attention);
    base.push_back(r.seconds.base_net);
    soams.push_back(r.seconds.soams);
    sampling.push_back(r.seconds.window_sampling);
    heads.push_back(r.seconds.heads);
    total.push_back(r.seconds.total);
  }
  TimingReport rep;
  rep.repetitions = reps;
  rep.median.base_net = median_of(base);
  rep.median.soams = median_of(soams);
  rep.median.window_sampling = median_of(sampling);
  rep.median.heads = median_of(heads);
  rep.median.total = median_of(total);
  return rep;
}

}  // namespace am
