// SPDX-License-Identifier: Apache-2.0

#include "gradekit/canvas.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gradekit/png.hpp"
#include "gradekit/trace.hpp"
#include "support/canvas_oracle.hpp"

namespace gc = gradekit::canvas;
using gradekit::testing::distance_to_box;
using gradekit::testing::random_expression;

namespace {

gc::RenderedExpression blank(int w, int h, const std::string& id) {
  gc::RenderedExpression e{gc::GrayImage(w, h), id};
  e.image.at(w / 2, h / 2) = 0;
  return e;
}

void expect_corners(const gc::OrientedBBox& box, std::initializer_list<gc::Point> want, double tol = 1e-12) {
  std::size_t k = 0;
  for (const auto& p : want) {
    EXPECT_NEAR(box.corners[k].x, p.x, tol) << "corner " << k;
    EXPECT_NEAR(box.corners[k].y, p.y, tol) << "corner " << k;
    ++k;
  }
}

gc::CanvasSpec random_spec(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  gc::CanvasSpec spec;
  spec.seed = seed;
  spec.padding = static_cast<int>(rng() % 12);
  spec.rotation_bound = static_cast<double>(rng() % 4000) / 100.0;
  const int n = 1 + static_cast<int>(rng() % 4);
  for (int i = 0; i < n; ++i) spec.expressions.push_back(random_expression(rng));
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(RotatedCorners, Identity) {
  expect_corners(gc::rotated_corners(10, 4, 0, {5, 2}, {0, 0}), {{0, 0}, {10, 0}, {10, 4}, {0, 4}});
}

TEST(RotatedCorners, HalfTurnMapsEachCornerToItsOpposite) {
  const auto box = gc::rotated_corners(10, 4, 180, {5, 2}, {0, 0});
  expect_corners(box, {{10, 4}, {0, 4}, {0, 0}, {10, 0}});
}

TEST(RotatedCorners, MatchesTextbookMatrix) {
  const auto box = gc::rotated_corners(10, 4, 30, {5, 2}, {3, 7});
  const gc::Point base[4] = {{0, 0}, {10, 0}, {10, 4}, {0, 4}};
  for (int k = 0; k < 4; ++k) {
    const auto r = gradekit::testing::textbook_rotate(base[k], {5, 2}, 30);
    EXPECT_NEAR(box.corners[k].x, r.x + 3, 1e-12);
    EXPECT_NEAR(box.corners[k].y, r.y + 7, 1e-12);
  }
  EXPECT_NEAR(box.angle_degrees(), 30.0, 1e-12);
}

TEST(RotatedCorners, RandomAgainstTextbookMatrix) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-200, 200);
  for (int i = 0; i < 1000; ++i) {
    const double w = 1 + std::abs(U(rng));
    const double h = 1 + std::abs(U(rng));
    const double a = U(rng) / 2.5;
    const gc::Point c{U(rng), U(rng)};
    const gc::Point off{U(rng), U(rng)};
    const auto box = gc::rotated_corners(w, h, a, c, off);
    const gc::Point base[4] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
    for (int k = 0; k < 4; ++k) {
      const auto r = gradekit::testing::textbook_rotate(base[k], c, a);
      ASSERT_NEAR(box.corners[k].x, r.x + off.x, 1e-9);
      ASSERT_NEAR(box.corners[k].y, r.y + off.y, 1e-9);
    }
  }
}

TEST(RotateImage, QuarterTurnSwapsExtentAndIsExact) {
  gc::GrayImage img(3, 2);
  img.at(0, 0) = 10;  // top-left
  img.at(2, 1) = 20;  // bottom-right
  const auto r = gc::rotate_image(img, 90);
  ASSERT_EQ(r.width, 2);
  ASSERT_EQ(r.height, 3);
  // Counter-clockwise on screen: top-left goes to bottom-left.
  EXPECT_EQ(r.at(0, 2), 10);
  EXPECT_EQ(r.at(1, 0), 20);
  EXPECT_EQ(gc::rotate_image(img, 0), img);
}

TEST(Synthesize, ZeroRotationZeroPaddingAbuts) {
  gc::CanvasSpec spec;
  spec.expressions = {blank(100, 20, "a"), blank(100, 20, "b")};
  const auto out = gc::synthesize_canvas(spec);
  ASSERT_EQ(out.boxes.size(), 2u);
  EXPECT_EQ(out.canvas.width, 100);
  EXPECT_EQ(out.canvas.height, 40);
  expect_corners(out.boxes[0], {{0, 0}, {100, 0}, {100, 20}, {0, 20}}, 0);
  expect_corners(out.boxes[1], {{0, 20}, {100, 20}, {100, 40}, {0, 40}}, 0);
}

TEST(Synthesize, ForcedQuarterTurnSwapsBoxSides) {
  gc::CanvasSpec spec;
  spec.expressions = {blank(40, 10, "a")};
  spec.forced_angles = std::vector<double>{90.0};
  const auto out = gc::synthesize_canvas(spec);
  const auto& c = out.boxes[0].corners;
  double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
  for (const auto& p : c) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  EXPECT_EQ(max_x - min_x, 10.0);
  EXPECT_EQ(max_y - min_y, 40.0);
  EXPECT_EQ(out.canvas.width, 10);
  EXPECT_EQ(out.canvas.height, 40);
}

TEST(Synthesize, DeterministicPerSeed) {
  const auto spec = random_spec(99);
  const auto a = gc::synthesize_canvas(spec);
  const auto b = gc::synthesize_canvas(spec);
  EXPECT_EQ(a.canvas, b.canvas);
  EXPECT_EQ(a.boxes, b.boxes);
  auto other = spec;
  other.seed = 100;
  other.rotation_bound = 30;
  EXPECT_NE(gc::synthesize_canvas(other).boxes, a.boxes);
}

TEST(Synthesize, RejectsBadSpecs) {
  gc::CanvasSpec spec;
  EXPECT_THROW(gc::synthesize_canvas(spec), gradekit::UsageError);
  spec.expressions = {blank(5, 5, "a")};
  spec.rotation_bound = 90;
  EXPECT_THROW(gc::synthesize_canvas(spec), gradekit::UsageError);
  spec.rotation_bound = 10;
  spec.padding = -1;
  EXPECT_THROW(gc::synthesize_canvas(spec), gradekit::UsageError);
}

TEST(Synthesize, GeometryPropertiesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto spec = random_spec(seed);
    const auto out = gc::synthesize_canvas(spec);
    ASSERT_EQ(out.boxes.size(), spec.expressions.size());
    for (std::size_t i = 0; i < out.boxes.size(); ++i) {
      const auto& box = out.boxes[i];
      const auto& c = box.corners;
      auto len = [](gc::Point a, gc::Point b) { return std::hypot(a.x - b.x, a.y - b.y); };
      ASSERT_NEAR(len(c[0], c[1]), len(c[2], c[3]), 1e-6);
      ASSERT_NEAR(len(c[1], c[2]), len(c[3], c[0]), 1e-6);
      ASSERT_LE(std::abs(box.angle_degrees()), spec.rotation_bound + 1e-6);
      const auto& p = out.placements[i];
      for (int y = 0; y < p.rotated.height; ++y) {
        for (int x = 0; x < p.rotated.width; ++x) {
          if (p.rotated.at(x, y) == gc::kWhite) continue;
          ASSERT_LE(distance_to_box(box, {p.x + x + 0.5, p.y + y + 0.5}), 1.0) << "seed " << seed;
        }
      }
      if (i > 0) {
        ASSERT_LT(out.boxes[i - 1].centroid().y, box.centroid().y);
      }
    }
    // Every ink pixel on the canvas belongs to some box.
    for (int y = 0; y < out.canvas.height; ++y) {
      for (int x = 0; x < out.canvas.width; ++x) {
        if (out.canvas.at(x, y) == gc::kWhite) continue;
        double best = INFINITY;
        for (const auto& b : out.boxes) best = std::min(best, distance_to_box(b, {x + 0.5, y + 0.5}));
        ASSERT_LE(best, 1.0);
      }
    }
    ASSERT_NO_THROW(gc::emit_obb_labels(out.boxes, out.canvas.width, out.canvas.height, 0));
  }
}

TEST(Synthesize, ZeroPaddingOrdersLines) {
  for (int t = 0; t < 50; ++t) {
    auto spec = random_spec(1000 + t);
    spec.padding = 0;
    const auto out = gc::synthesize_canvas(spec);
    for (std::size_t i = 1; i < out.boxes.size(); ++i) {
      ASSERT_LT(out.boxes[i - 1].centroid().y, out.boxes[i].centroid().y);
    }
  }
}

TEST(Labels, FullCanvasBox) {
  const gc::OrientedBBox box{{gc::Point{0, 0}, gc::Point{64, 0}, gc::Point{64, 32}, gc::Point{0, 32}}};
  EXPECT_EQ(gc::emit_obb_labels({box}, 64, 32, 0),
            "0 0.000000 0.000000 1.000000 0.000000 1.000000 1.000000 0.000000 1.000000\n");
  EXPECT_EQ(gc::emit_obb_labels({}, 64, 32, 0), "");
}

TEST(Labels, OutOfBoundsNamesTheBox) {
  const gc::OrientedBBox ok{{gc::Point{0, 0}, gc::Point{1, 0}, gc::Point{1, 1}, gc::Point{0, 1}}};
  const gc::OrientedBBox bad{{gc::Point{0, 0}, gc::Point{11, 0}, gc::Point{1, 1}, gc::Point{0, 1}}};
  try {
    gc::emit_obb_labels({ok, ok, bad}, 10, 10, 0);
    FAIL();
  } catch (const gradekit::OutOfBounds& e) {
    EXPECT_EQ(e.box_index(), 2u);
  }
}

TEST(Labels, RoundTrip) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 1000; ++t) {
    const int W = 1 + static_cast<int>(rng() % 3000);
    const int H = 1 + static_cast<int>(rng() % 3000);
    std::uniform_real_distribution<double> ux(0, W), uy(0, H);
    gc::OrientedBBox box;
    for (auto& p : box.corners) p = {ux(rng), uy(rng)};
    std::istringstream in(gc::emit_obb_labels({box}, W, H, 3));
    int cls = -1;
    in >> cls;
    ASSERT_EQ(cls, 3);
    for (const auto& p : box.corners) {
      double nx, ny;
      in >> nx >> ny;
      ASSERT_LT(std::abs(nx * W - p.x), 1e-5 * std::max(W, H));
      ASSERT_LT(std::abs(ny * H - p.y), 1e-5 * std::max(W, H));
    }
  }
}

TEST(Trace, RendersSampleCorpus) {
  const auto traces = gc::load_trace_dir(std::filesystem::path(GRADEKIT_SOURCE_DIR) / "data" / "traces");
  ASSERT_GE(traces.size(), 10u);
  for (const auto& t : traces) {
    const auto e = gc::render_trace(t);
    EXPECT_EQ(e.source_id, t.id);
    int ink = 0;
    for (auto px : e.image.pixels) ink += px < 128;
    EXPECT_GT(ink, 50) << t.id;
    for (int x = 0; x < e.image.width; ++x) {
      EXPECT_EQ(e.image.at(x, 0), gc::kWhite);
      EXPECT_EQ(e.image.at(x, e.image.height - 1), gc::kWhite);
    }
    EXPECT_EQ(gc::render_trace(t).image, e.image);
  }
}

TEST(Trace, RejectsMalformedInput) {
  EXPECT_THROW(gc::parse_trace(nlohmann::json::parse(R"({"id":"a","strokes":[]})")), gradekit::UsageError);
  EXPECT_THROW(gc::parse_trace(nlohmann::json::parse(R"({"id":"a","strokes":[[[1]]]})")), gradekit::UsageError);
  EXPECT_THROW(gc::parse_trace(nlohmann::json::parse(R"({"strokes":[[[1,2]]]})")), gradekit::UsageError);
}

TEST(Png, RoundTripAndStableBytes) {
  const auto dir = std::filesystem::temp_directory_path() / "gradekit_png_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(5);
  const auto img = random_expression(rng).image;
  gc::write_png(dir / "a.png", img);
  gc::write_png(dir / "b.png", img);
  EXPECT_EQ(gc::read_png(dir / "a.png"), img);
  EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
  std::filesystem::remove_all(dir);
}
