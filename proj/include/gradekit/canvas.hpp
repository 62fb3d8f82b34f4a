// SPDX-License-Identifier: Apache-2.0
//
// Multi-line expression canvases with oriented bounding boxes.
//
// Raster convention: pixel (i, j) covers [i, i+1) x [j, j+1) and is sampled
// at its center (i + 0.5, j + 0.5); y grows downward. Images are 8-bit
// grayscale, 255 = white background, darker = ink.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gradekit/errors.hpp"
#include "gradekit/random.hpp"

namespace gradekit::canvas {

inline constexpr std::uint8_t kWhite = 255;

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = kWhite)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

struct RenderedExpression {
  GrayImage image;
  std::string source_id;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Four corners, clockwise on screen starting at the top-left corner of the
/// unrotated box: TL, TR, BR, BL.
struct OrientedBBox {
  std::array<Point, 4> corners;
  bool operator==(const OrientedBBox&) const = default;

  Point centroid() const {
    Point c;
    for (const auto& p : corners) {
      c.x += p.x / 4;
      c.y += p.y / 4;
    }
    return c;
  }
  /// Rotation angle in degrees, positive = counter-clockwise on screen.
  double angle_degrees() const {
    const double dx = corners[1].x - corners[0].x;
    const double dy = corners[1].y - corners[0].y;
    return std::atan2(-dy, dx) * 180.0 / std::numbers::pi;
  }
};

struct CanvasSpec {
  int padding = 0;               // P
  double rotation_bound = 0.0;   // theta, degrees
  std::uint64_t seed = 0;
  std::vector<RenderedExpression> expressions;
  /// Test hook: fixed per-expression angles instead of sampled ones.
  std::optional<std::vector<double>> forced_angles;
};

struct Placement {
  double angle = 0.0;  // degrees
  int x = 0;           // top-left of the rotated raster on the final canvas
  int y = 0;
  GrayImage rotated;
};

struct CanvasResult {
  GrayImage canvas;
  std::vector<OrientedBBox> boxes;
  std::vector<Placement> placements;
};

// ---------------------------------------------------------------------------
// Geometry

struct Trig {
  double c;
  double s;
};

/// cos/sin of an angle in degrees, exact at multiples of 90.
inline Trig trig_degrees(double deg) {
  const double q = deg / 90.0;
  if (q == std::round(q)) {
    const long k = ((static_cast<long>(std::round(q)) % 4) + 4) % 4;
    static constexpr Trig table[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    return table[k];
  }
  const double rad = deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

/// Rotates d by deg counter-clockwise on screen (y down).
inline Point rotate(Point d, Trig t) { return {t.c * d.x + t.s * d.y, -t.s * d.x + t.c * d.y}; }
inline Point rotate_inverse(Point d, Trig t) { return {t.c * d.x - t.s * d.y, t.s * d.x + t.c * d.y}; }

/// Corners of the w x h box rotated by alpha about center, then shifted.
inline OrientedBBox rotated_corners(double w, double h, double alpha_deg, Point center, Point offset) {
  if (!(w > 0) || !(h > 0)) throw UsageError("rotated_corners: width and height must be positive");
  const Trig t = trig_degrees(alpha_deg);
  const std::array<Point, 4> base{Point{0, 0}, Point{w, 0}, Point{w, h}, Point{0, h}};
  OrientedBBox box;
  for (std::size_t k = 0; k < 4; ++k) {
    const Point r = rotate({base[k].x - center.x, base[k].y - center.y}, t);
    box.corners[k] = {center.x + r.x + offset.x, center.y + r.y + offset.y};
  }
  return box;
}

/// Integer raster size that holds a w x h image rotated by alpha.
inline std::pair<int, int> rotated_extent(int w, int h, double alpha_deg) {
  const Trig t = trig_degrees(alpha_deg);
  const double rw = std::abs(w * t.c) + std::abs(h * t.s);
  const double rh = std::abs(w * t.s) + std::abs(h * t.c);
  return {std::max(1, static_cast<int>(std::ceil(rw - 1e-9))), std::max(1, static_cast<int>(std::ceil(rh - 1e-9)))};
}

/// Bilinear rotation about the image center with the output grown to fit
/// ("expand"); uncovered pixels are white.
inline GrayImage rotate_image(const GrayImage& src, double alpha_deg) {
  const auto [rw, rh] = rotated_extent(src.width, src.height, alpha_deg);
  const Trig t = trig_degrees(alpha_deg);
  GrayImage out(rw, rh);
  const double scx = src.width / 2.0;
  const double scy = src.height / 2.0;
  auto sample = [&src](long x, long y) -> double {
    if (x < 0 || y < 0 || x >= src.width || y >= src.height) return kWhite;
    return src.at(static_cast<int>(x), static_cast<int>(y));
  };
  for (int j = 0; j < rh; ++j) {
    for (int i = 0; i < rw; ++i) {
      const Point p = rotate_inverse({i + 0.5 - rw / 2.0, j + 0.5 - rh / 2.0}, t);
      const double u = p.x + scx - 0.5;
      const double v = p.y + scy - 0.5;
      const double fu = std::floor(u);
      const double fv = std::floor(v);
      const long x0 = static_cast<long>(fu);
      const long y0 = static_cast<long>(fv);
      const double ax = u - fu;
      const double ay = v - fv;
      const double val = (1 - ax) * (1 - ay) * sample(x0, y0) + ax * (1 - ay) * sample(x0 + 1, y0) +
                         (1 - ax) * ay * sample(x0, y0 + 1) + ax * ay * sample(x0 + 1, y0 + 1);
      out.at(i, j) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthesis

inline void check_spec(const CanvasSpec& spec) {
  if (spec.expressions.empty()) throw UsageError("canvas spec needs at least one expression");
  if (spec.padding < 0) throw UsageError("padding bound must be non-negative");
  if (!(spec.rotation_bound >= 0.0 && spec.rotation_bound < 90.0)) {
    throw UsageError("rotation bound must lie in [0, 90) degrees");
  }
  for (const auto& e : spec.expressions) {
    if (e.image.width <= 0 || e.image.height <= 0) {
      throw UsageError("expression '" + e.source_id + "' has an empty raster");
    }
  }
  if (spec.forced_angles && spec.forced_angles->size() != spec.expressions.size()) {
    throw UsageError("forced_angles must have one angle per expression");
  }
}

inline CanvasResult synthesize_canvas(const CanvasSpec& spec) {
  check_spec(spec);
  Rng rng(spec.seed);
  const std::size_t n = spec.expressions.size();
  const double theta = spec.rotation_bound;

  // Angles first: the canvas width depends on every rotated width.
  std::vector<Placement> placed(n);
  int max_width = 0;
  for (std::size_t i = 0; i < n; ++i) {
    placed[i].angle = spec.forced_angles ? (*spec.forced_angles)[i]
                      : theta == 0.0     ? 0.0
                                         : uniform_real(rng, -theta, theta);
    placed[i].rotated = rotate_image(spec.expressions[i].image, placed[i].angle);
    max_width = std::max(max_width, placed[i].rotated.width);
  }
  const int canvas_width = max_width + 2 * spec.padding;

  int y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int rw = placed[i].rotated.width;
    const int rh = placed[i].rotated.height;
    placed[i].x = static_cast<int>(uniform_int(rng, 0, canvas_width - rw));
    placed[i].y = y;
    // Overlap is allowed, but never so much that line order inverts.
    const int jitter = static_cast<int>(uniform_int(rng, -spec.padding, spec.padding));
    y += rh + std::max(jitter, -(rh / 2));
  }

  // Crop to the union of pasted rasters (top is always y = 0).
  int x0 = canvas_width;
  int x1 = 0;
  int y1 = 0;
  for (const auto& p : placed) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x + p.rotated.width);
    y1 = std::max(y1, p.y + p.rotated.height);
  }

  CanvasResult out;
  out.canvas = GrayImage(x1 - x0, y1);
  for (std::size_t i = 0; i < n; ++i) {
    Placement& p = placed[i];
    p.x -= x0;
    for (int j = 0; j < p.rotated.height; ++j) {
      for (int k = 0; k < p.rotated.width; ++k) {
        auto& dst = out.canvas.at(p.x + k, p.y + j);
        dst = std::min(dst, p.rotated.at(k, j));
      }
    }
    const auto& img = spec.expressions[i].image;
    const Point center{img.width / 2.0, img.height / 2.0};
    const Point shift{p.x + (p.rotated.width - img.width) / 2.0, p.y + (p.rotated.height - img.height) / 2.0};
    out.boxes.push_back(rotated_corners(img.width, img.height, p.angle, center, shift));
  }
  out.placements = std::move(placed);
  return out;
}

// ---------------------------------------------------------------------------
// Labels

/// One "class x1 y1 ... x4 y4" line per box, coordinates normalized by the
/// canvas size. Corners within 1e-9 px outside the canvas are clamped.
inline std::string emit_obb_labels(const std::vector<OrientedBBox>& boxes, int canvas_width, int canvas_height,
                                   int class_id) {
  if (canvas_width <= 0 || canvas_height <= 0) throw UsageError("canvas size must be positive");
  constexpr double tol = 1e-9;
  std::string out;
  char buf[64];
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%d", class_id);
    out += buf;
    for (const auto& c : boxes[b].corners) {
      if (!(c.x >= -tol && c.x <= canvas_width + tol && c.y >= -tol && c.y <= canvas_height + tol)) {
        throw OutOfBounds("box " + std::to_string(b) + " has a corner outside the canvas", b);
      }
      // "+ 0.0" turns a clamped -0.0 into 0.0 so it never prints as "-0.000000".
      const double nx = std::clamp(c.x / canvas_width, 0.0, 1.0) + 0.0;
      const double ny = std::clamp(c.y / canvas_height, 0.0, 1.0) + 0.0;
      std::snprintf(buf, sizeof buf, " %.6f %.6f", nx, ny);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace gradekit::canvas
