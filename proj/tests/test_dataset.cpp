#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attentionmask/dataset.hpp"
#include "attentionmask/rle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace am;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("am_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(SizeBucket, PaperBoundaries) {
  EXPECT_EQ(size_bucket(1023), SizeBucket::Small);
  EXPECT_EQ(size_bucket(1024), SizeBucket::Medium);   // boundary assigned upward
  EXPECT_EQ(size_bucket(9215), SizeBucket::Medium);
  EXPECT_EQ(size_bucket(9216), SizeBucket::Large);
  EXPECT_EQ(size_bucket(1), SizeBucket::Small);
  EXPECT_THROW(size_bucket(0), std::domain_error);
  EXPECT_THROW(size_bucket(-5), std::domain_error);
}

TEST(Synthetic, SingleObjectForcedByParameters) {
  SyntheticConfig cfg;
  cfg.count = 1;
  cfg.height = cfg.width = 128;
  cfg.min_px = 8;
  cfg.max_px = 32;
  cfg.min_objects = cfg.max_objects = 1;
  cfg.seed = 7;
  DatasetManifest m = generate_synthetic_dataset(cfg);
  ASSERT_EQ(m.samples.size(), 1u);
  ASSERT_EQ(m.samples[0].objects.size(), 1u);
  const auto& o = m.samples[0].objects[0];
  EXPECT_GE(o.area, 22);      // thinnest triangle at the smallest size
  EXPECT_LE(o.area, 32 * 32);
  EXPECT_GE(o.bbox.w, 4);
  EXPECT_LE(o.bbox.w, 32);
  EXPECT_GE(o.bbox.h, 4);
  EXPECT_LE(o.bbox.h, 32);
}

TEST(Synthetic, DeterministicForFixedSeed) {
  SyntheticConfig cfg;
  cfg.count = 4;
  cfg.height = cfg.width = 96;
  cfg.min_px = 8;
  cfg.max_px = 40;
  cfg.seed = 7;
  DatasetManifest a = generate_synthetic_dataset(cfg);
  DatasetManifest b = generate_synthetic_dataset(cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, b.samples[i].id);
    EXPECT_EQ(a.samples[i].image.px, b.samples[i].image.px);
    ASSERT_EQ(a.samples[i].objects.size(), b.samples[i].objects.size());
    for (std::size_t j = 0; j < a.samples[i].objects.size(); ++j)
      EXPECT_TRUE(a.samples[i].objects[j].mask == b.samples[i].objects[j].mask);
  }
}

TEST(Synthetic, OnDiskArtifactsAreByteIdentical) {
  SyntheticConfig cfg;
  cfg.count = 3;
  cfg.height = cfg.width = 96;
  cfg.seed = 11;
  cfg.min_px = 8;
  cfg.max_px = 40;
  fs::path d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  save_manifest(generate_synthetic_dataset(cfg), d1.string());
  save_manifest(generate_synthetic_dataset(cfg), d2.string());
  EXPECT_EQ(slurp(d1 / "manifest.json"), slurp(d2 / "manifest.json"));
  EXPECT_EQ(slurp(d1 / "images/img_000000.png"), slurp(d2 / "images/img_000000.png"));
  EXPECT_EQ(slurp(d1 / "images/img_000002.png"), slurp(d2 / "images/img_000002.png"));
}

// Bucket histogram measured after generation (size rule from the evaluation
// protocol): the default-style corpus must contain small and medium objects.
TEST(Synthetic, SizeHistogramCoversSmallAndMedium) {
  SyntheticConfig cfg;
  cfg.count = 200;
  cfg.height = cfg.width = 256;
  cfg.min_px = 8;
  cfg.max_px = 96;
  cfg.min_objects = 2;
  cfg.max_objects = 6;
  cfg.seed = 1;
  DatasetManifest m = generate_synthetic_dataset(cfg);
  int small = 0, medium = 0, large = 0;
  for (const auto& s : m.samples)
    for (const auto& o : s.objects) {
      switch (size_bucket(o.area)) {
        case SizeBucket::Small: ++small; break;
        case SizeBucket::Medium: ++medium; break;
        case SizeBucket::Large: ++large; break;
      }
    }
  EXPECT_GT(small, 0);
  EXPECT_GT(medium, 0);
}

TEST(Synthetic, RejectsInvalidRanges) {
  SyntheticConfig cfg;
  cfg.min_px = 2;  // below the minimum of 4
  EXPECT_THROW(generate_synthetic_dataset(cfg), ConfigError);
  cfg = SyntheticConfig{};
  cfg.max_px = 300;
  cfg.height = cfg.width = 128;
  EXPECT_THROW(generate_synthetic_dataset(cfg), ConfigError);
  cfg = SyntheticConfig{};
  cfg.count = 0;
  EXPECT_THROW(generate_synthetic_dataset(cfg), ConfigError);
}

// Rasterized mask of a convex polygon equals an independent point-in-polygon
// test on every pixel center.
TEST(Rasterizer, MatchesWindingOracleOnConvexPolygons) {
  Rng rng(101);
  for (int trial = 0; trial < 60; ++trial) {
    int H = rng.uniform_int(16, 64), W = rng.uniform_int(16, 64);
    auto poly = testutil::random_convex_polygon(rng, rng.uniform(4.0, W - 4.0),
                                                rng.uniform(4.0, H - 4.0),
                                                rng.uniform(3.0, 12.0), rng.uniform_int(3, 8));
    Mask2D got = rasterize_polygons({poly}, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        bool expect = testutil::winding_inside(poly, x + 0.5, y + 0.5);
        ASSERT_EQ(got.get(y, x), expect)
            << "trial " << trial << " pixel (" << y << "," << x << ")";
      }
  }
}

TEST(Rasterizer, SquarePolygonPinnedConvention) {
  // (10,10)-(20,10)-(20,20)-(10,20): centers 10.5..19.5 inside, area 100.
  std::vector<double> poly = {10, 10, 20, 10, 20, 20, 10, 20};
  Mask2D m = rasterize_polygons({poly}, 32, 32);
  EXPECT_EQ(m.area(), 100);
  BBox b = m.tight_bbox();
  EXPECT_EQ(b.x, 10);
  EXPECT_EQ(b.y, 10);
  EXPECT_EQ(b.w, 10);
  EXPECT_EQ(b.h, 10);
}

// ---------------------------------------------------------------------------
// COCO ingest
// ---------------------------------------------------------------------------

namespace {

fs::path write_coco_fixture(const std::string& tag, const nlohmann::json& doc,
                            bool with_image = true) {
  fs::path dir = temp_dir(tag);
  if (with_image) {
    ImageU8 im(32, 32);
    write_png_rgb((dir / "img1.png").string(), im);
  }
  std::ofstream out(dir / "ann.json");
  out << doc.dump();
  out.close();
  return dir;
}

nlohmann::json coco_base() {
  return {{"images",
           {{{"id", 1}, {"file_name", "img1.png"}, {"height", 32}, {"width", 32}}}},
          {"annotations", nlohmann::json::array()}};
}

}  // namespace

TEST(CocoLoad, SquarePolygonAreaHundred) {
  nlohmann::json doc = coco_base();
  doc["annotations"].push_back(
      {{"id", 5},
       {"image_id", 1},
       {"segmentation", {{10.0, 10.0, 20.0, 10.0, 20.0, 20.0, 10.0, 20.0}}},
       {"area", 100},
       {"bbox", {10, 10, 10, 10}}});
  fs::path dir = write_coco_fixture("coco_sq", doc);
  DatasetManifest m = load_coco_annotations((dir / "ann.json").string(), dir.string());
  ASSERT_EQ(m.samples.size(), 1u);
  ASSERT_EQ(m.samples[0].objects.size(), 1u);
  EXPECT_EQ(m.samples[0].objects[0].area, 100);
  EXPECT_EQ(m.samples[0].objects[0].id, 5);
}

TEST(CocoLoad, EmptyAnnotationsGivesImagesWithoutObjects) {
  fs::path dir = write_coco_fixture("coco_empty", coco_base());
  DatasetManifest m = load_coco_annotations((dir / "ann.json").string(), dir.string());
  ASSERT_EQ(m.samples.size(), 1u);
  EXPECT_TRUE(m.samples[0].objects.empty());
}

TEST(CocoLoad, UnknownImageIdIsFatal) {
  nlohmann::json doc = coco_base();
  doc["annotations"].push_back(
      {{"id", 9}, {"image_id", 77}, {"segmentation", {{1.0, 1.0, 5.0, 1.0, 5.0, 5.0}}}});
  fs::path dir = write_coco_fixture("coco_badid", doc);
  EXPECT_THROW(load_coco_annotations((dir / "ann.json").string(), dir.string()), IoError);
}

TEST(CocoLoad, MissingImageFileSkipsSample) {
  fs::path dir = write_coco_fixture("coco_noimg", coco_base(), /*with_image=*/false);
  DatasetManifest m = load_coco_annotations((dir / "ann.json").string(), dir.string());
  EXPECT_TRUE(m.samples.empty());
}

TEST(CocoLoad, MalformedJsonIsFatal) {
  fs::path dir = temp_dir("coco_malformed");
  std::ofstream out(dir / "ann.json");
  out << "{ not json";
  out.close();
  EXPECT_THROW(load_coco_annotations((dir / "ann.json").string(), dir.string()), IoError);
}

TEST(CocoLoad, ZeroAreaPolygonDropped) {
  nlohmann::json doc = coco_base();
  // Degenerate sliver between pixel centers rasterizes to nothing.
  doc["annotations"].push_back(
      {{"id", 2}, {"image_id", 1}, {"segmentation", {{5.0, 5.0, 5.2, 5.0, 5.2, 5.1}}}});
  fs::path dir = write_coco_fixture("coco_zero", doc);
  DatasetManifest m = load_coco_annotations((dir / "ann.json").string(), dir.string());
  ASSERT_EQ(m.samples.size(), 1u);
  EXPECT_TRUE(m.samples[0].objects.empty());
}

// ---------------------------------------------------------------------------
// Manifest round trip and invariants
// ---------------------------------------------------------------------------

TEST(Manifest, RoundTripPreservesMasksAndIds) {
  SyntheticConfig cfg;
  cfg.count = 3;
  cfg.height = 96;
  cfg.width = 112;
  cfg.seed = 3;
  cfg.min_px = 8;
  cfg.max_px = 40;
  DatasetManifest m = generate_synthetic_dataset(cfg);
  fs::path dir = temp_dir("roundtrip");
  save_manifest(m, dir.string());
  DatasetManifest r = load_manifest(dir.string());  // validate() runs on load
  ASSERT_EQ(r.samples.size(), m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    EXPECT_EQ(r.samples[i].id, m.samples[i].id);
    EXPECT_EQ(r.samples[i].image.px, m.samples[i].image.px);
    ASSERT_EQ(r.samples[i].objects.size(), m.samples[i].objects.size());
    for (std::size_t j = 0; j < m.samples[i].objects.size(); ++j) {
      EXPECT_TRUE(r.samples[i].objects[j].mask == m.samples[i].objects[j].mask);
      EXPECT_EQ(r.samples[i].objects[j].area, m.samples[i].objects[j].area);
    }
  }
}

TEST(Manifest, DuplicateIdsRejected) {
  DatasetManifest m;
  m.samples.push_back(testutil::sample_with_rects(64, 64, {{10, 10, 16, 16}}, "dup"));
  m.samples.push_back(testutil::sample_with_rects(64, 64, {{20, 20, 16, 16}}, "dup"));
  EXPECT_THROW(m.validate(), ShapeError);
}

TEST(Flip, InvolutionOnImageAndMasks) {
  ImageSample s = testutil::sample_with_rects(48, 64, {{5, 8, 12, 20}});
  ImageSample back = s.flipped_horizontal().flipped_horizontal();
  EXPECT_EQ(back.image.px, s.image.px);
  EXPECT_TRUE(back.objects[0].mask == s.objects[0].mask);
  // single flip moves the bbox to the mirrored column
  ImageSample f = s.flipped_horizontal();
  EXPECT_EQ(f.objects[0].bbox.x, 64 - (5 + 12));
  EXPECT_EQ(f.objects[0].bbox.y, 8);
}

// ---------------------------------------------------------------------------
// RLE + PNG formats
// ---------------------------------------------------------------------------

TEST(Rle, ColumnMajorStartsWithZeroRun) {
  Mask2D m(3, 2);
  m.set(0, 0);  // first cell in column-major order
  Rle r = rle_encode(m);
  ASSERT_GE(r.counts.size(), 2u);
  EXPECT_EQ(r.counts[0], 0);  // zero-run first even when empty
  EXPECT_EQ(r.counts[1], 1);
  EXPECT_EQ(r.counts[2], 5);
}

TEST(Rle, RoundTripProperty) {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    int h = rng.uniform_int(1, 40), w = rng.uniform_int(1, 40);
    Mask2D m(h, w);
    double density = rng.uniform();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (rng.uniform() < density) m.set(y, x);
    Rle r = rle_encode(m);
    std::int64_t sum = 0;
    for (auto c : r.counts) {
      EXPECT_GE(c, 0);
      sum += c;
    }
    EXPECT_EQ(sum, std::int64_t(h) * w);
    EXPECT_TRUE(rle_decode(r) == m);
  }
}

TEST(Rle, RejectsOverflowingRuns) {
  Rle r;
  r.h = 2;
  r.w = 2;
  r.counts = {1, 5};
  EXPECT_THROW(rle_decode(r), ShapeError);
  r.counts = {1, 1};
  EXPECT_THROW(rle_decode(r), ShapeError);  // does not cover the mask
}

TEST(Png, RgbRoundTrip) {
  Rng rng(77);
  ImageU8 im(21, 33);
  for (auto& p : im.px) p = std::uint8_t(rng.uniform_int(0, 255));
  fs::path dir = temp_dir("png");
  write_png_rgb((dir / "x.png").string(), im);
  ImageU8 back = read_png_rgb((dir / "x.png").string());
  EXPECT_EQ(back.h, im.h);
  EXPECT_EQ(back.w, im.w);
  EXPECT_EQ(back.px, im.px);
}

TEST(Png, MissingFileThrows) {
  EXPECT_THROW(read_png_rgb("/nonexistent/path.png"), IoError);
}
