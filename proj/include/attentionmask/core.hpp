#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace am {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Atomic counter that stays copyable so instrumented structs keep value
// semantics.
struct Counter {
  mutable std::atomic<long> value{0};

  Counter() = default;
  Counter(const Counter& o) : value(o.value.load()) {}
  Counter& operator=(const Counter& o) {
    value.store(o.value.load());
    return *this;
  }
  void bump() const { value.fetch_add(1); }
  long get() const { return value.load(); }
};

// Deterministic RNG used everywhere seeds matter. splitmix64 core so results
// do not depend on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + int(next_u64() % span);
  }

  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Derived stream, e.g. per-image generation from (seed, index).
  Rng sub(std::uint64_t stream) const {
    Rng r(state_ ^ (0x632be59bd9b4e019ULL * (stream + 1)));
    r.next_u64();
    return r;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Dense h x w x c grid of doubles, HWC layout. The one activation container.
struct Tensor {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, 0.0) {}

  double& at(int y, int x, int ch) { return v[(std::size_t(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(std::size_t(y) * w + x) * c + ch]; }

  std::size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }

  void add(const Tensor& o) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
  }
};

struct BBox {
  int x = 0, y = 0, w = 0, h = 0;  // pixel units, w/h are extents

  bool contains(const BBox& o) const {
    return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
  }
};

// Packed binary grid. Bit index is y*w + x.
class Mask2D {
 public:
  Mask2D() = default;
  Mask2D(int h, int w) : h_(h), w_(w), bits_((std::size_t(h) * w + 63) / 64, 0) {}

  int height() const { return h_; }
  int width() const { return w_; }

  bool get(int y, int x) const {
    std::size_t i = std::size_t(y) * w_ + x;
    return (bits_[i >> 6] >> (i & 63)) & 1ULL;
  }

  void set(int y, int x, bool on = true) {
    std::size_t i = std::size_t(y) * w_ + x;
    if (on)
      bits_[i >> 6] |= (1ULL << (i & 63));
    else
      bits_[i >> 6] &= ~(1ULL << (i & 63));
  }

  int area() const {
    int n = 0;
    for (auto word : bits_) n += std::popcount(word);
    return n;
  }

  bool empty() const { return area() == 0; }

  static int intersection_area(const Mask2D& a, const Mask2D& b) {
    int n = 0;
    for (std::size_t i = 0; i < a.bits_.size(); ++i) n += std::popcount(a.bits_[i] & b.bits_[i]);
    return n;
  }

  static int union_area(const Mask2D& a, const Mask2D& b) {
    int n = 0;
    for (std::size_t i = 0; i < a.bits_.size(); ++i) n += std::popcount(a.bits_[i] | b.bits_[i]);
    return n;
  }

  bool operator==(const Mask2D& o) const { return h_ == o.h_ && w_ == o.w_ && bits_ == o.bits_; }

  // Tight bounding box; throws on empty mask.
  BBox tight_bbox() const {
    int x0 = w_, y0 = h_, x1 = -1, y1 = -1;
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        if (get(y, x)) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    if (x1 < 0) throw ShapeError("tight_bbox on empty mask");
    return BBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
  }

  Mask2D flipped_horizontal() const {
    Mask2D out(h_, w_);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        if (get(y, x)) out.set(y, w_ - 1 - x);
    return out;
  }

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint64_t> bits_;
};

}  // namespace am
