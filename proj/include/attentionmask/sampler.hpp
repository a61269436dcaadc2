#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "attentionmask/backbone.hpp"
#include "attentionmask/core.hpp"
#include "attentionmask/soam.hpp"

namespace am {

// A fixed-size feature window addressed by its attention cell. The even
// window is centered on the corner between cells (r,c) and (r+1,c+1); its
// feature-space top-left is (r - ws/2 + 1 ... ), i.e. (r-4, c-4) for the
// default window of 10.
struct WindowRef {
  ScaleSpec scale;
  int r = 0, c = 0;
  double attention = 1.0;

  int feature_y() const { return r - (scale.window_size / 2 - 1); }
  int feature_x() const { return c - (scale.window_size / 2 - 1); }

  BBox image_rect() const {
    int px = scale.window_px();
    return BBox{feature_x() * scale.stride, feature_y() * scale.stride, px, px};
  }
};

enum class WindowOrigin { GroundTruth, PredictedAttention };

struct WindowBatch {
  std::vector<WindowRef> windows;
  WindowOrigin origin = WindowOrigin::PredictedAttention;
};

struct RankedWindows {
  std::vector<WindowRef> windows;  // attention-descending across all scales
  std::int64_t budget = 0;
};

// Count of fully contained window placements; cells still exist beyond this
// (border windows are zero-filled on extraction).
inline std::int64_t enumerate_window_count(int f_h, int f_w, int window) {
  if (window < 1) throw ConfigError("enumerate_window_count: window must be >= 1");
  std::int64_t rows = std::max(0, f_h - window + 1);
  std::int64_t cols = std::max(0, f_w - window + 1);
  return rows * cols;
}

namespace detail {
inline bool rank_less(const WindowRef& a, const WindowRef& b) {
  if (a.attention != b.attention) return a.attention > b.attention;
  if (a.scale.stride != b.scale.stride) return a.scale.stride > b.scale.stride;  // coarser first
  if (a.r != b.r) return a.r < b.r;
  return a.c < b.c;
}
}  // namespace detail

// Joint ranking across scales: every cell at or above the threshold competes;
// ties go to the coarser stride, then row-major order.
inline RankedWindows joint_rank(const std::vector<AttentionMap>& maps, std::int64_t K,
                                double threshold) {
  if (maps.empty()) throw ConfigError("joint_rank: no attention maps");
  if (K < 1) throw ConfigError("joint_rank: K must be >= 1");
  RankedWindows out;
  out.budget = K;
  for (const auto& m : maps)
    for (int r = 0; r < m.h; ++r)
      for (int c = 0; c < m.w; ++c) {
        double a = m.at(r, c);
        if (a >= threshold) out.windows.push_back(WindowRef{m.scale, r, c, a});
      }
  std::sort(out.windows.begin(), out.windows.end(), detail::rank_less);
  if (std::int64_t(out.windows.size()) > K) out.windows.resize(std::size_t(K));
  return out;
}

// All cells of every map, ranked by the same order with attention forced to
// one: the exhaustive-sampling baseline arm.
inline RankedWindows exhaustive_windows(const FeaturePyramid& pyramid) {
  RankedWindows out;
  out.budget = 0;
  for (const auto& lvl : pyramid.levels)
    for (int r = 0; r < lvl.map.data.h; ++r)
      for (int c = 0; c < lvl.map.data.w; ++c)
        out.windows.push_back(WindowRef{lvl.spec, r, c, 1.0});
  std::sort(out.windows.begin(), out.windows.end(), detail::rank_less);
  out.budget = std::int64_t(out.windows.size());
  return out;
}

// Copies the ws x ws x C region at the window's feature rect; cells outside
// the map are zero-filled so border windows stay sampleable.
inline Tensor extract_window(const FeatureMap& f, const WindowRef& ref) {
  if (f.stride != ref.scale.stride)
    throw ShapeError("extract_window: feature stride " + std::to_string(f.stride) +
                     " does not match window scale " + ref.scale.name);
  const int ws = ref.scale.window_size;
  Tensor win(ws, ws, f.data.c);
  int fy = ref.feature_y(), fx = ref.feature_x();
  for (int y = 0; y < ws; ++y) {
    int sy = fy + y;
    if (sy < 0 || sy >= f.data.h) continue;
    for (int x = 0; x < ws; ++x) {
      int sx = fx + x;
      if (sx < 0 || sx >= f.data.w) continue;
      for (int ch = 0; ch < f.data.c; ++ch) win.at(y, x, ch) = f.data.at(sy, sx, ch);
    }
  }
  return win;
}

// Scatter-add of a window gradient back into its level gradient map.
inline void scatter_window_grad(const Tensor& dwin, const WindowRef& ref, Tensor& dlevel) {
  const int ws = ref.scale.window_size;
  int fy = ref.feature_y(), fx = ref.feature_x();
  for (int y = 0; y < ws; ++y) {
    int sy = fy + y;
    if (sy < 0 || sy >= dlevel.h) continue;
    for (int x = 0; x < ws; ++x) {
      int sx = fx + x;
      if (sx < 0 || sx >= dlevel.w) continue;
      for (int ch = 0; ch < dlevel.c; ++ch) dlevel.at(sy, sx, ch) += dwin.at(y, x, ch);
    }
  }
}

// Training-time sampling: positives uniform over GT-positive cells pooled
// across scales, negatives uniform over the pooled GT-zero cells.
inline WindowBatch sample_training_windows(const std::vector<GtAttention>& gts,
                                           const std::vector<ScaleSpec>& scales,
                                           int per_image_budget, double pos_fraction, Rng& rng) {
  if (per_image_budget < 1) throw ConfigError("sample_training_windows: budget must be >= 1");
  if (pos_fraction < 0.0 || pos_fraction > 1.0)
    throw ConfigError("sample_training_windows: pos_fraction must be in [0,1]");
  std::vector<WindowRef> pos, neg;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const GtAttention& gt = gts[i];
    for (int r = 0; r < gt.h; ++r)
      for (int c = 0; c < gt.w; ++c) {
        std::int8_t l = gt.at(r, c);
        if (l == 1)
          pos.push_back(WindowRef{scales[i], r, c, 1.0});
        else if (l == 0)
          neg.push_back(WindowRef{scales[i], r, c, 0.0});
      }
  }
  WindowBatch batch;
  batch.origin = WindowOrigin::GroundTruth;
  std::size_t want_pos = std::size_t(std::llround(per_image_budget * pos_fraction));
  want_pos = std::min(want_pos, pos.size());
  if (pos.empty()) std::cerr << "[warn] no GT-positive attention cells; all-negative batch\n";
  for (std::size_t i = 0; i < want_pos; ++i) {
    std::size_t j = i + rng.next_u64() % (pos.size() - i);
    std::swap(pos[i], pos[j]);
    batch.windows.push_back(pos[i]);
  }
  std::size_t want_neg = std::min(neg.size(), std::size_t(per_image_budget) - want_pos);
  for (std::size_t i = 0; i < want_neg; ++i) {
    std::size_t j = i + rng.next_u64() % (neg.size() - i);
    std::swap(neg[i], neg[j]);
    batch.windows.push_back(neg[i]);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Pruning statistics (Table-5 style report)
// ---------------------------------------------------------------------------

struct PruneScaleStats {
  ScaleSpec scale;
  std::int64_t total_cells = 0;
  std::int64_t selected = 0;
  std::int64_t gt_positives = 0;
  std::int64_t retained_positives = 0;

  double recall() const {
    return gt_positives > 0 ? double(retained_positives) / double(gt_positives)
                            : std::nan("");
  }
  double pruned_fraction() const {
    return total_cells > 0 ? 1.0 - double(selected) / double(total_cells) : 0.0;
  }
};

struct PruneStats {
  std::vector<PruneScaleStats> per_scale;
  PruneScaleStats overall;  // scale.name == "ALL"
};

inline PruneStats pruning_stats(const std::vector<AttentionMap>& maps,
                                const std::vector<GtAttention>& gts, std::int64_t K,
                                double threshold) {
  if (maps.size() != gts.size()) throw ShapeError("pruning_stats: maps/gt count mismatch");
  PruneStats st;
  st.per_scale.resize(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].h != gts[i].h || maps[i].w != gts[i].w)
      throw ShapeError("pruning_stats: shape mismatch at " + maps[i].scale.name);
    st.per_scale[i].scale = maps[i].scale;
    st.per_scale[i].total_cells = std::int64_t(maps[i].h) * maps[i].w;
    st.per_scale[i].gt_positives = gts[i].positive_count();
  }
  RankedWindows sel = joint_rank(maps, K, threshold);
  for (const auto& wref : sel.windows) {
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (maps[i].scale.stride != wref.scale.stride) continue;
      ++st.per_scale[i].selected;
      if (gts[i].at(wref.r, wref.c) == 1) ++st.per_scale[i].retained_positives;
      break;
    }
  }
  st.overall.scale = ScaleSpec{"ALL", 0, 0, maps[0].scale.window_size};
  for (const auto& row : st.per_scale) {
    st.overall.total_cells += row.total_cells;
    st.overall.selected += row.selected;
    st.overall.gt_positives += row.gt_positives;
    st.overall.retained_positives += row.retained_positives;
  }
  return st;
}

// Accumulate dataset-level sums (per-image stats added into `into`).
inline void accumulate_prune_stats(PruneStats& into, const PruneStats& add) {
  if (into.per_scale.empty()) {
    into = add;
    return;
  }
  if (into.per_scale.size() != add.per_scale.size())
    throw ShapeError("accumulate_prune_stats: scale count mismatch");
  for (std::size_t i = 0; i < add.per_scale.size(); ++i) {
    into.per_scale[i].total_cells += add.per_scale[i].total_cells;
    into.per_scale[i].selected += add.per_scale[i].selected;
    into.per_scale[i].gt_positives += add.per_scale[i].gt_positives;
    into.per_scale[i].retained_positives += add.per_scale[i].retained_positives;
  }
  into.overall.total_cells += add.overall.total_cells;
  into.overall.selected += add.overall.selected;
  into.overall.gt_positives += add.overall.gt_positives;
  into.overall.retained_positives += add.overall.retained_positives;
}

inline std::string prune_stats_csv(const PruneStats& st) {
  std::ostringstream os;
  os << "scale,stride,total_cells,selected,gt_positives,retained_positives,recall,"
        "pruned_fraction\n";
  auto row = [&os](const PruneScaleStats& r) {
    os << r.scale.name << ',' << r.scale.stride << ',' << r.total_cells << ',' << r.selected
       << ',' << r.gt_positives << ',' << r.retained_positives << ',';
    double rec = r.recall();
    if (std::isnan(rec))
      os << "nan";
    else
      os << rec;
    os << ',' << r.pruned_fraction() << '\n';
  };
  for (const auto& r : st.per_scale) row(r);
  row(st.overall);
  return os.str();
}

}  // namespace am
