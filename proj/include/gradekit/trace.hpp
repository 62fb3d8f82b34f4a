// SPDX-License-Identifier: Apache-2.0
//
// Symbol-level pen traces and an anti-aliased stroke renderer.
//
// Trace file (JSON):
//   {"id": "expr-001", "text": "2x+5=13",
//    "strokes": [[[x, y], [x, y], ...], ...]}
// Coordinates are in arbitrary pen units with y growing downward; "text"
// is optional and informational.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradekit/canvas.hpp"
#include "gradekit/errors.hpp"

namespace gradekit::canvas {

using Stroke = std::vector<Point>;

struct Trace {
  std::string id;
  std::string text;
  std::vector<Stroke> strokes;
};

inline Trace parse_trace(const nlohmann::json& j) {
  Trace t;
  try {
    t.id = j.at("id").get<std::string>();
    t.text = j.value("text", "");
    for (const auto& s : j.at("strokes")) {
      Stroke stroke;
      for (const auto& pt : s) {
        if (!pt.is_array() || pt.size() != 2) throw UsageError("trace point must be [x, y]");
        const Point p{pt[0].get<double>(), pt[1].get<double>()};
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw UsageError("trace point is not finite");
        stroke.push_back(p);
      }
      if (!stroke.empty()) t.strokes.push_back(std::move(stroke));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed trace: ") + e.what());
  }
  if (t.strokes.empty()) throw UsageError("trace '" + t.id + "' has no strokes");
  return t;
}

inline Trace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open trace file " + path.string());
  try {
    return parse_trace(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

/// All *.json traces in a directory, sorted by file name.
inline std::vector<Trace> load_trace_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw UsageError("trace directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Trace> out;
  for (const auto& f : files) out.push_back(load_trace(f));
  if (out.empty()) throw UsageError("no .json traces in " + dir.string());
  return out;
}

struct RenderOptions {
  double target_height = 48.0;  // px spanned by the trace's vertical extent
  double pen_width = 3.0;       // px
  int margin = 4;               // px of white around the ink
};

namespace detail {

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

}  // namespace detail

/// Renders strokes as round-capped lines; coverage falls off linearly over
/// one pixel at the pen edge.
inline RenderedExpression render_trace(const Trace& trace, const RenderOptions& opt = {}) {
  if (!(opt.target_height > 0) || !(opt.pen_width > 0) || opt.margin < 0) {
    throw UsageError("render options must be positive");
  }
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  for (const auto& s : trace.strokes) {
    for (const auto& p : s) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
  }
  // Flat traces (a lone minus sign) scale by width instead.
  const double extent = std::max({max_y - min_y, (max_x - min_x) / 8.0, 1e-9});
  const double scale = opt.target_height / extent;
  const double pad = opt.margin + opt.pen_width / 2.0 + 1.0;
  const int w = static_cast<int>(std::ceil((max_x - min_x) * scale + 2 * pad));
  const int h = static_cast<int>(std::ceil((max_y - min_y) * scale + 2 * pad));

  RenderedExpression out{GrayImage(w, h), trace.id};
  std::vector<float> coverage(static_cast<std::size_t>(w) * h, 0.0f);
  const double r = opt.pen_width / 2.0;
  auto to_px = [&](Point p) { return Point{(p.x - min_x) * scale + pad, (p.y - min_y) * scale + pad}; };

  for (const auto& s : trace.strokes) {
    for (std::size_t k = 0; k < s.size(); ++k) {
      const Point a = to_px(s[k]);
      const Point b = to_px(s[k + 1 < s.size() ? k + 1 : k]);
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r - 1)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r - 1)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r + 1)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double d = detail::segment_distance({x + 0.5, y + 0.5}, a, b);
          const float c = static_cast<float>(std::clamp(r + 0.5 - d, 0.0, 1.0));
          auto& cell = coverage[static_cast<std::size_t>(y) * w + x];
          cell = std::max(cell, c);
        }
      }
    }
  }
  for (std::size_t i = 0; i < coverage.size(); ++i) {
    out.image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - coverage[i])));
  }
  return out;
}

}  // namespace gradekit::canvas
