#include "bdl/digits.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bdl {

namespace {

struct Point {
  double x, y;
};

using Stroke = std::vector<Point>;

Stroke bezier(Point a, Point b, Point c, int segments = 8) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = static_cast<double>(i) / segments;
    const double u = 1.0 - t;
    s.push_back({u * u * a.x + 2 * u * t * b.x + t * t * c.x,
                 u * u * a.y + 2 * u * t * b.y + t * t * c.y});
  }
  return s;
}

Stroke ellipse(Point center, double rx, double ry, int segments = 14, double phase = 0.0) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = phase + 2.0 * M_PI * i / segments;
    s.push_back({center.x + rx * std::cos(t), center.y + ry * std::sin(t)});
  }
  return s;
}

// Skeletons in a unit box, x right, y down.
std::vector<Stroke> digit_skeleton(int digit) {
  switch (digit) {
    case 0:
      return {ellipse({0.5, 0.5}, 0.26, 0.38)};
    case 1:
      return {{{0.34, 0.28}, {0.54, 0.10}, {0.54, 0.90}}};
    case 2:
      return {bezier({0.22, 0.30}, {0.50, -0.08}, {0.76, 0.32}),
              bezier({0.76, 0.32}, {0.72, 0.58}, {0.22, 0.88}),
              {{0.22, 0.88}, {0.80, 0.88}}};
    case 3:
      return {bezier({0.26, 0.16}, {0.80, 0.10}, {0.52, 0.46}),
              bezier({0.52, 0.46}, {0.88, 0.62}, {0.28, 0.88})};
    case 4:
      return {{{0.58, 0.10}, {0.20, 0.62}, {0.84, 0.62}}, {{0.64, 0.34}, {0.64, 0.92}}};
    case 5:
      return {{{0.74, 0.12}, {0.28, 0.12}, {0.26, 0.48}},
              bezier({0.26, 0.48}, {0.86, 0.42}, {0.64, 0.80}),
              bezier({0.64, 0.80}, {0.50, 0.96}, {0.24, 0.80})};
    case 6:
      return {bezier({0.68, 0.10}, {0.32, 0.26}, {0.28, 0.62}),
              ellipse({0.48, 0.66}, 0.21, 0.23)};
    case 7:
      return {{{0.18, 0.14}, {0.82, 0.14}, {0.42, 0.90}}};
    case 8:
      return {ellipse({0.50, 0.30}, 0.20, 0.19), ellipse({0.50, 0.69}, 0.24, 0.22)};
    case 9:
      return {ellipse({0.48, 0.34}, 0.21, 0.23),
              bezier({0.69, 0.36}, {0.72, 0.66}, {0.56, 0.92})};
    default:
      throw ContractViolation("digit_skeleton: digit out of range");
  }
}

double segment_distance(double px, double py, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = px - a.x, wy = py - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset generate_digits(const DigitGenConfig& config) {
  require(config.count > 0, "generate_digits: count must be positive");
  const int64_t n = config.count;
  const double dif = config.difficulty;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> digit_dist(0, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> pixels(static_cast<size_t>(n) * 28 * 28, 0.0);
  std::vector<int64_t> labels(static_cast<size_t>(n));

  for (int64_t s = 0; s < n; ++s) {
    const int digit = digit_dist(rng);
    labels[static_cast<size_t>(s)] = digit;

    const double rot = dif * (unit(rng) - 0.5) * 0.50;    // ~ +-14 deg
    const double shear = dif * (unit(rng) - 0.5) * 0.50;
    const double sx = 1.0 + dif * (unit(rng) - 0.5) * 0.30;
    const double sy = 1.0 + dif * (unit(rng) - 0.5) * 0.30;
    const double tx = dif * (unit(rng) - 0.5) * 3.0;
    const double ty = dif * (unit(rng) - 0.5) * 3.0;
    const double thickness = 1.5 + dif * unit(rng) * 1.1;
    const double ink = 1.0 - dif * unit(rng) * 0.25;
    const double noise = dif * 0.03;

    const double cr = std::cos(rot), sr = std::sin(rot);
    // design box 20x20 centered in the 28x28 frame
    auto map_point = [&](Point p) -> Point {
      double x = (p.x - 0.5) * 20.0 * sx;
      double y = (p.y - 0.5) * 20.0 * sy;
      x += shear * y;
      const double xr = cr * x - sr * y;
      const double yr = sr * x + cr * y;
      return {xr + 14.0 + tx, yr + 14.0 + ty};
    };

    std::vector<std::pair<Point, Point>> segments;
    for (const auto& stroke : digit_skeleton(digit)) {
      for (size_t i = 0; i + 1 < stroke.size(); ++i) {
        segments.emplace_back(map_point(stroke[i]), map_point(stroke[i + 1]));
      }
    }

    double* img = pixels.data() + s * 28 * 28;
    const double half = thickness / 2.0;
    const double edge = 0.8;
    for (const auto& [a, b] : segments) {
      const int i0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half - edge)));
      const int i1 = std::min(27, static_cast<int>(std::ceil(std::max(a.y, b.y) + half + edge)));
      const int j0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half - edge)));
      const int j1 = std::min(27, static_cast<int>(std::ceil(std::max(a.x, b.x) + half + edge)));
      for (int i = i0; i <= i1; ++i) {
        for (int j = j0; j <= j1; ++j) {
          const double d = segment_distance(j + 0.5, i + 0.5, a, b);
          const double v = ink * std::clamp((half + edge - d) / edge, 0.0, 1.0);
          double& px = img[i * 28 + j];
          px = std::max(px, v);
        }
      }
    }

    if (noise > 0.0) {
      std::normal_distribution<double> jitter(0.0, noise);
      for (int k = 0; k < 28 * 28; ++k) {
        img[k] = std::clamp(img[k] + jitter(rng), 0.0, 1.0);
      }
    }
  }

  Dataset ds;
  ds.images = Tensor::leaf({n, 28, 28, 1}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.name = "synthetic-digits";
  return ds;
}

}  // namespace bdl
