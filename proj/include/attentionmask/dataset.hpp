#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attentionmask/core.hpp"
#include "attentionmask/image.hpp"
#include "attentionmask/rle.hpp"

namespace am {

struct AnnotatedObject {
  int id = 0;
  Mask2D mask;
  BBox bbox;      // tight bbox of mask
  int area = 0;   // 1-pixel count of mask
  std::string category;
};

// Derives bbox/area and enforces the mask consistency invariants.
inline AnnotatedObject make_object(int id, Mask2D mask, std::string category) {
  AnnotatedObject o;
  o.id = id;
  o.area = mask.area();
  if (o.area <= 0) throw ShapeError("object " + std::to_string(id) + " has empty mask");
  o.bbox = mask.tight_bbox();
  o.mask = std::move(mask);
  o.category = std::move(category);
  return o;
}

struct ImageSample {
  std::string id;
  ImageU8 image;
  std::vector<AnnotatedObject> objects;

  void validate() const {
    for (const auto& o : objects) {
      if (o.mask.height() != image.h || o.mask.width() != image.w)
        throw ShapeError("object mask shape differs from image in sample " + id);
      if (o.area != o.mask.area() || o.area <= 0)
        throw ShapeError("object area inconsistent in sample " + id);
      BBox tb = o.mask.tight_bbox();
      if (tb.x != o.bbox.x || tb.y != o.bbox.y || tb.w != o.bbox.w || tb.h != o.bbox.h)
        throw ShapeError("object bbox not tight in sample " + id);
    }
  }

  ImageSample flipped_horizontal() const {
    ImageSample out;
    out.id = id;
    out.image = ImageU8(image.h, image.w);
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x)
        for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = image.at(y, image.w - 1 - x, ch);
    for (const auto& o : objects)
      out.objects.push_back(make_object(o.id, o.mask.flipped_horizontal(), o.category));
    return out;
  }
};

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::string split = "train";
  std::int64_t seed = 0;

  void validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.id).second) throw ShapeError("duplicate sample id " + s.id);
      s.validate();
    }
  }
};

enum class SizeBucket { Small, Medium, Large };

// COCO-style size classes: small below 32^2, large from 96^2 up. Boundaries
// are assigned upward.
inline SizeBucket size_bucket(int area) {
  if (area <= 0) throw std::domain_error("size_bucket: area must be positive");
  if (area < 32 * 32) return SizeBucket::Small;
  if (area < 96 * 96) return SizeBucket::Medium;
  return SizeBucket::Large;
}

inline const char* bucket_name(SizeBucket b) {
  switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    default: return "large";
  }
}

// ---------------------------------------------------------------------------
// Polygon rasterization
// ---------------------------------------------------------------------------

// A pixel belongs to the polygon iff its center (x+0.5, y+0.5) is inside.
// Uses the even-odd crossing rule with half-open comparisons, which makes
// boundaries inclusive on top/left edges; COCO tooling differs subtly here,
// so the convention is pinned.
inline bool point_in_polygon(const std::vector<double>& poly, double px, double py) {
  bool inside = false;
  std::size_t n = poly.size() / 2;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    double xi = poly[2 * i], yi = poly[2 * i + 1];
    double xj = poly[2 * j], yj = poly[2 * j + 1];
    if ((yi > py) != (yj > py)) {
      double xint = xi + (py - yi) / (yj - yi) * (xj - xi);
      if (px < xint) inside = !inside;
    }
  }
  return inside;
}

inline Mask2D rasterize_polygons(const std::vector<std::vector<double>>& polys, int h, int w) {
  Mask2D m(h, w);
  for (const auto& poly : polys) {
    if (poly.size() < 6 || poly.size() % 2 != 0) continue;
    double x0 = poly[0], x1 = poly[0], y0 = poly[1], y1 = poly[1];
    for (std::size_t i = 0; i < poly.size(); i += 2) {
      x0 = std::min(x0, poly[i]);
      x1 = std::max(x1, poly[i]);
      y0 = std::min(y0, poly[i + 1]);
      y1 = std::max(y1, poly[i + 1]);
    }
    int ax = std::max(0, int(std::floor(x0)) - 1), bx = std::min(w - 1, int(std::ceil(x1)) + 1);
    int ay = std::max(0, int(std::floor(y0)) - 1), by = std::min(h - 1, int(std::ceil(y1)) + 1);
    for (int y = ay; y <= by; ++y)
      for (int x = ax; x <= bx; ++x)
        if (!m.get(y, x) && point_in_polygon(poly, x + 0.5, y + 0.5)) m.set(y, x);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic data generation
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int count = 100;
  int height = 256, width = 256;
  int min_px = 8, max_px = 96;           // target side lengths of shapes
  int min_objects = 2, max_objects = 6;  // per image
  std::int64_t seed = 0;
  std::string split = "train";

  void validate() const {
    if (count < 1) throw ConfigError("synthetic: count must be >= 1");
    if (min_px < 4) throw ConfigError("synthetic: min_px must be >= 4");
    if (max_px > std::min(height, width))
      throw ConfigError("synthetic: max_px must be <= min(H, W)");
    if (min_px > max_px) throw ConfigError("synthetic: min_px > max_px");
    if (min_objects < 0 || min_objects > max_objects)
      throw ConfigError("synthetic: bad objects_per_image range");
    if (height < 8 || width < 8) throw ConfigError("synthetic: image too small");
  }
};

namespace detail {

inline double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Returns the mask of one randomly drawn shape, or an empty optional if the
// placement overlaps existing occupancy.
inline std::optional<Mask2D> try_place_shape(Rng& rng, int H, int W, int min_px, int max_px,
                                             const Mask2D& occupancy, std::string* shape_name) {
  int kind = rng.uniform_int(0, 2);
  int s = rng.uniform_int(min_px, max_px);
  int s2 = rng.uniform_int(std::max(4, (6 * s + 9) / 10), s);  // second side, aspect <= 5:3
  if (rng.uniform() < 0.5) std::swap(s, s2);

  int bw = s, bh = s2;
  if (bw >= W || bh >= H) return std::nullopt;
  int x = rng.uniform_int(1, W - bw - 1);
  int y = rng.uniform_int(1, H - bh - 1);

  Mask2D m(H, W);
  if (kind == 0) {
    *shape_name = "circle";
    double cx = x + bw / 2.0, cy = y + bh / 2.0;
    double rx = bw / 2.0, ry = bh / 2.0;
    for (int yy = y; yy < y + bh; ++yy)
      for (int xx = x; xx < x + bw; ++xx) {
        double dx = (xx + 0.5 - cx) / rx, dy = (yy + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) m.set(yy, xx);
      }
  } else if (kind == 1) {
    *shape_name = "rectangle";
    for (int yy = y; yy < y + bh; ++yy)
      for (int xx = x; xx < x + bw; ++xx) m.set(yy, xx);
  } else {
    *shape_name = "triangle";
    // Right triangle on half the bbox, random orientation.
    double X = x, Y = y, X1 = x + bw, Y1 = y + bh;
    std::vector<std::vector<double>> tris = {
        {X, Y, X1, Y, X, Y1}, {X, Y, X1, Y, X1, Y1}, {X, Y, X1, Y1, X, Y1}, {X1, Y, X1, Y1, X, Y1}};
    const auto& tri = tris[std::size_t(rng.uniform_int(0, 3))];
    Mask2D t = rasterize_polygons({tri}, H, W);
    m = t;
  }
  if (m.empty()) return std::nullopt;
  if (Mask2D::intersection_area(m, occupancy) > 0) return std::nullopt;
  return m;
}

}  // namespace detail

// Deterministic synthetic scenes: textured background (gradient plus
// low-amplitude noise) with non-overlapping filled shapes and exact per-object
// masks. Per-image streams are derived from (seed, index) so generation order
// does not matter.
inline DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  DatasetManifest manifest;
  manifest.split = cfg.split;
  manifest.seed = cfg.seed;
  Rng root(std::uint64_t(cfg.seed) * 0x9e3779b97f4a7c15ULL + 0x51ULL);

  for (int idx = 0; idx < cfg.count; ++idx) {
    Rng rng = root.sub(std::uint64_t(idx));
    ImageSample sample;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%06d", idx);
    sample.id = buf;
    const int H = cfg.height, W = cfg.width;
    sample.image = ImageU8(H, W);

    // Background: linear gradient between two mid-tones plus uniform noise.
    double c0[3], c1[3];
    for (int ch = 0; ch < 3; ++ch) {
      c0[ch] = rng.uniform(0.25, 0.75);
      c1[ch] = rng.uniform(0.25, 0.75);
    }
    double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double gx = std::cos(ang), gy = std::sin(ang);
    double bg_lum = detail::luminance((c0[0] + c1[0]) / 2, (c0[1] + c1[1]) / 2,
                                      (c0[2] + c1[2]) / 2);
    std::vector<double> pix(std::size_t(H) * W * 3);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double t = 0.5 + 0.5 * ((x - W / 2.0) / W * gx + (y - H / 2.0) / H * gy);
        for (int ch = 0; ch < 3; ++ch) {
          double v = c0[ch] * (1 - t) + c1[ch] * t + rng.uniform(-0.04, 0.04);
          pix[(std::size_t(y) * W + x) * 3 + ch] = v;
        }
      }

    int n_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    Mask2D occupancy(H, W);
    int next_id = 1;
    for (int k = 0; k < n_objects; ++k) {
      std::optional<Mask2D> placed;
      std::string shape;
      for (int attempt = 0; attempt < 60 && !placed; ++attempt)
        placed = detail::try_place_shape(rng, H, W, cfg.min_px, cfg.max_px, occupancy, &shape);
      if (!placed) continue;  // crowded image, fewer objects than drawn

      double col[3];
      for (int tries = 0; tries < 32; ++tries) {
        for (int ch = 0; ch < 3; ++ch) col[ch] = rng.uniform(0.0, 1.0);
        if (std::abs(detail::luminance(col[0], col[1], col[2]) - bg_lum) >= 0.2) break;
      }
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (placed->get(y, x)) {
            occupancy.set(y, x);
            for (int ch = 0; ch < 3; ++ch)
              pix[(std::size_t(y) * W + x) * 3 + ch] = col[ch] + rng.uniform(-0.02, 0.02);
          }
      sample.objects.push_back(make_object(next_id++, std::move(*placed), shape));
    }

    for (std::size_t i = 0; i < pix.size(); ++i) {
      double v = std::clamp(pix[i], 0.0, 1.0);
      sample.image.px[i] = std::uint8_t(std::lround(v * 255.0));
    }
    manifest.samples.push_back(std::move(sample));
  }
  manifest.validate();
  return manifest;
}

// ---------------------------------------------------------------------------
// COCO-format ingest (polygon segmentations only)
// ---------------------------------------------------------------------------

inline DatasetManifest load_coco_annotations(const std::string& json_path,
                                             const std::string& image_dir) {
  nlohmann::json doc;
  {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path);
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed annotation JSON " + json_path + ": " + e.what());
    }
  }
  if (!doc.contains("images") || !doc.contains("annotations"))
    throw IoError(json_path + ": missing images/annotations arrays");

  struct ImgRec {
    std::string file_name;
    int h = 0, w = 0;
    std::vector<AnnotatedObject> objects;
  };
  std::map<std::int64_t, ImgRec> images;
  std::vector<std::int64_t> order;
  for (const auto& im : doc["images"]) {
    std::int64_t id = im.at("id").get<std::int64_t>();
    ImgRec rec;
    rec.file_name = im.at("file_name").get<std::string>();
    rec.h = im.at("height").get<int>();
    rec.w = im.at("width").get<int>();
    images[id] = std::move(rec);
    order.push_back(id);
  }

  for (const auto& ann : doc["annotations"]) {
    std::int64_t image_id = ann.at("image_id").get<std::int64_t>();
    auto it = images.find(image_id);
    if (it == images.end())
      throw IoError("annotation " + ann.at("id").dump() + " references unknown image_id " +
                    std::to_string(image_id));
    std::vector<std::vector<double>> polys;
    for (const auto& poly : ann.at("segmentation"))
      polys.push_back(poly.get<std::vector<double>>());
    Mask2D mask = rasterize_polygons(polys, it->second.h, it->second.w);
    if (mask.empty()) {
      std::cerr << "[warn] dropping zero-area rasterization for annotation "
                << ann.at("id").dump() << "\n";
      continue;
    }
    it->second.objects.push_back(
        make_object(int(ann.at("id").get<std::int64_t>()), std::move(mask), "object"));
  }

  DatasetManifest manifest;
  manifest.split = "val";
  for (auto id : order) {
    auto& rec = images[id];
    ImageSample sample;
    sample.id = std::to_string(id);
    std::filesystem::path p = std::filesystem::path(image_dir) / rec.file_name;
    try {
      sample.image = read_png_rgb(p.string());
    } catch (const IoError& e) {
      std::cerr << "[warn] skipping sample " << sample.id << ": " << e.what() << "\n";
      continue;
    }
    if (sample.image.h != rec.h || sample.image.w != rec.w) {
      std::cerr << "[warn] skipping sample " << sample.id << ": file size differs from header\n";
      continue;
    }
    sample.objects = std::move(rec.objects);
    manifest.samples.push_back(std::move(sample));
  }
  manifest.validate();
  return manifest;
}

// ---------------------------------------------------------------------------
// Native manifest on disk: images/*.png plus manifest.json with RLE masks.
// ---------------------------------------------------------------------------

inline void save_manifest(const DatasetManifest& manifest, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  nlohmann::json root;
  root["split"] = manifest.split;
  root["seed"] = manifest.seed;
  root["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples) {
    std::string rel = "images/" + s.id + ".png";
    write_png_rgb((fs::path(dir) / rel).string(), s.image);
    nlohmann::json js;
    js["id"] = s.id;
    js["file"] = rel;
    js["height"] = s.image.h;
    js["width"] = s.image.w;
    js["objects"] = nlohmann::json::array();
    for (const auto& o : s.objects) {
      Rle r = rle_encode(o.mask);
      js["objects"].push_back({{"id", o.id},
                               {"category", o.category},
                               {"rle", {{"size", {r.h, r.w}}, {"counts", r.counts}}}});
    }
    root["samples"].push_back(std::move(js));
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << root.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot open " + dir + "/manifest.json");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest.json: ") + e.what());
  }
  DatasetManifest manifest;
  manifest.split = root.value("split", "train");
  manifest.seed = root.value("seed", std::int64_t(0));
  for (const auto& js : root.at("samples")) {
    ImageSample s;
    s.id = js.at("id").get<std::string>();
    s.image = read_png_rgb((fs::path(dir) / js.at("file").get<std::string>()).string());
    for (const auto& jo : js.at("objects")) {
      Rle r;
      r.h = jo.at("rle").at("size")[0].get<int>();
      r.w = jo.at("rle").at("size")[1].get<int>();
      r.counts = jo.at("rle").at("counts").get<std::vector<std::int64_t>>();
      s.objects.push_back(make_object(jo.at("id").get<int>(), rle_decode(r),
                                      jo.value("category", "object")));
    }
    manifest.samples.push_back(std::move(s));
  }
  manifest.validate();
  return manifest;
}

}  // namespace am
