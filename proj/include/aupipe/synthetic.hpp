#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "aupipe/align.hpp"
#include "aupipe/image.hpp"

namespace aupipe {

/// Cartoon face with three switchable actions standing in for AU25 (lips
/// part), AU26 (jaw drop) and AU43 (eyes closed).
struct SyntheticFace {
  bool lips_part = false;
  bool jaw_drop = false;
  bool eyes_closed = false;
  std::array<double, 3> skin{200, 160, 130};
  std::array<double, 3> background{90, 100, 110};

  /// Presence labels in AU order 25, 26, 43.
  std::vector<double> labels() const { return {lips_part ? 1.0 : 0.0, jaw_drop ? 1.0 : 0.0, eyes_closed ? 1.0 : 0.0}; }
};

inline SyntheticFace random_face(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> jitter(-20.0, 20.0);
  SyntheticFace f;
  f.lips_part = coin(rng);
  f.jaw_drop = coin(rng);
  f.eyes_closed = coin(rng);
  for (auto& c : f.skin) c += jitter(rng);
  for (auto& c : f.background) c += jitter(rng);
  return f;
}

namespace detail {

inline bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

// Colour at a point in 224-pixel template coordinates.
inline std::array<double, 3> face_colour(const SyntheticFace& f, double x, double y) {
  const double drop = f.jaw_drop ? 18.0 : 0.0;
  const double mouth_y = 171.0 + 0.7 * drop;
  std::array<double, 3> c = f.background;
  if (inside_ellipse(x, y, 112, 118 + drop / 2, 82, 74 + drop / 2)) c = f.skin;
  for (double ex : {72.0, 152.0}) {
    if (!inside_ellipse(x, y, ex, 96, 30, 18)) continue;
    if (f.eyes_closed) {
      c = {f.skin[0] * 0.55, f.skin[1] * 0.5, f.skin[2] * 0.5};
    } else {
      c = {245, 245, 240};
      if (inside_ellipse(x, y, ex, 96, 9, 9)) c = {30, 25, 20};
    }
  }
  if (inside_ellipse(x, y, 112, mouth_y, 44, f.lips_part ? 29 : 10)) {
    c = {170, 50, 60};
    if (f.lips_part && inside_ellipse(x, y, 112, mouth_y, 38, 22)) c = {20, 10, 10};
  }
  return c;
}

}  // namespace detail

/// Renders `face` into a width x height frame; `to_image` maps template
/// coordinates to frame pixels. Each pixel averages a 2x2 supersample, plus
/// Gaussian noise of `noise` grey levels.
inline Image render_face(const SyntheticFace& face, const SimilarityTransform& to_image, std::size_t width,
                         std::size_t height, std::mt19937_64& rng, double noise = 4.0) {
  const auto inv = to_image.inverse();
  std::normal_distribution<double> gauss(0.0, noise);
  Image img(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (double oy : {0.25, 0.75})
        for (double ox : {0.25, 0.75}) {
          const auto p = inv.apply({static_cast<double>(x) - 0.5 + ox, static_cast<double>(y) - 0.5 + oy});
          const auto c = detail::face_colour(face, p.x, p.y);
          for (std::size_t k = 0; k < 3; ++k) acc[k] += c[k] / 4.0;
        }
      for (std::size_t k = 0; k < 3; ++k)
        img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::floor(acc[k] + gauss(rng) + 0.5), 0.0, 255.0));
    }
  return img;
}

/// Small random pose around the canonical placement in an out_size crop:
/// rotation within +-max_deg, scale within +-max_scale, shift within +-max_shift px.
inline SimilarityTransform jittered_pose(std::size_t out_size, std::mt19937_64& rng, double max_deg = 4.0,
                                         double max_scale = 0.04, double max_shift = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double k = static_cast<double>(out_size) / 224.0 * (1.0 + max_scale * u(rng));
  const double th = max_deg * u(rng) * 3.14159265358979323846 / 180.0;
  const double c = static_cast<double>(out_size) / 2.0;
  SimilarityTransform t{k * std::cos(th), k * std::sin(th), 0, 0};
  // keep the template centre (112, 112) near the crop centre
  t.tx = c - (t.a * 112 - t.b * 112) + max_shift * u(rng);
  t.ty = c - (t.b * 112 + t.a * 112) + max_shift * u(rng);
  return t;
}

/// Landmarks of a face drawn with `to_image`.
inline LandmarkSet synthetic_landmarks(const std::string& frame_id, const SimilarityTransform& to_image) {
  const auto tmpl = CanonicalTemplate::standard();
  LandmarkSet s;
  s.frame_id = frame_id;
  for (std::size_t i = 0; i < kLandmarkCount; ++i) s.points[i] = to_image.apply(tmpl.points[i]);
  return s;
}

}  // namespace aupipe
