#pragma once

#include <cstdint>
#include <vector>

#include "attentionmask/core.hpp"

namespace am {

// Uncompressed integer run-length encoding of a binary mask. Runs alternate
// 0/1 and are counted in column-major order (down column 0 first); the first
// run counts zeros and may be 0 when the mask starts with a 1. This is the
// bit-exact wire format for proposal masks and manifest ground truth.
struct Rle {
  int h = 0, w = 0;
  std::vector<std::int64_t> counts;
};

inline Rle rle_encode(const Mask2D& m) {
  Rle r;
  r.h = m.height();
  r.w = m.width();
  std::int64_t run = 0;
  bool cur = false;  // first run counts zeros
  for (int x = 0; x < r.w; ++x) {
    for (int y = 0; y < r.h; ++y) {
      bool v = m.get(y, x);
      if (v == cur) {
        ++run;
      } else {
        r.counts.push_back(run);
        cur = v;
        run = 1;
      }
    }
  }
  r.counts.push_back(run);
  return r;
}

inline Mask2D rle_decode(const Rle& r) {
  Mask2D m(r.h, r.w);
  std::int64_t total = std::int64_t(r.h) * r.w;
  std::int64_t pos = 0;
  bool cur = false;
  for (auto cnt : r.counts) {
    if (cnt < 0 || pos + cnt > total) throw ShapeError("rle_decode: runs exceed mask size");
    if (cur) {
      for (std::int64_t i = pos; i < pos + cnt; ++i) {
        int x = int(i / r.h);
        int y = int(i % r.h);
        m.set(y, x);
      }
    }
    pos += cnt;
    cur = !cur;
  }
  if (pos != total) throw ShapeError("rle_decode: runs do not cover mask");
  return m;
}

}  // namespace am
