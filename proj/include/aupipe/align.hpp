#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aupipe/csv.hpp"
#include "aupipe/errors.hpp"
#include "aupipe/image.hpp"
#include "aupipe/tensor/tensor.hpp"

namespace aupipe {

inline constexpr std::size_t kLandmarkCount = 68;

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

/// The 68 facial points of one frame, in source-image pixels.
struct LandmarkSet {
  std::string frame_id;
  std::array<Point, kLandmarkCount> points{};
};

/// Throws ValidationError unless every point is finite and the set spans a
/// 2-D region (at least three non-collinear points).
inline void validate_landmarks(std::span<const Point> points) {
  if (points.size() != kLandmarkCount)
    throw ValidationError("expected 68 landmarks, got " + std::to_string(points.size()));
  double mx = 0, my = 0;
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("non-finite landmark coordinate");
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : points) {
    sxx += (p.x - mx) * (p.x - mx);
    syy += (p.y - my) * (p.y - my);
    sxy += (p.x - mx) * (p.y - my);
  }
  // eigenvalues of the 2x2 scatter matrix
  const double tr = sxx + syy;
  const double disc = std::sqrt(std::max(0.0, (sxx - syy) * (sxx - syy) / 4 + sxy * sxy));
  const double hi = tr / 2 + disc, lo = tr / 2 - disc;
  if (!(hi > 0) || lo <= 1e-12 * hi) throw ValidationError("degenerate landmark configuration (collinear points)");
}

/// 2x3 similarity [[a, -b, tx], [b, a, ty]]: uniform scale sqrt(a^2+b^2),
/// rotation atan2(b, a), then translation.
struct SimilarityTransform {
  double a = 1, b = 0, tx = 0, ty = 0;

  static SimilarityTransform from_params(double scale, double theta, double tx, double ty) {
    return {scale * std::cos(theta), scale * std::sin(theta), tx, ty};
  }

  double scale() const { return std::hypot(a, b); }
  double rotation() const { return std::atan2(b, a); }

  std::array<double, 6> matrix() const { return {a, -b, tx, b, a, ty}; }
  static SimilarityTransform from_matrix(const std::array<double, 6>& m) {
    if (m[0] != m[4] || m[1] != -m[3]) throw ValidationError("matrix is not a similarity");
    return {m[0], m[3], m[2], m[5]};
  }

  Point apply(Point p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }

  SimilarityTransform inverse() const {
    const double s2 = a * a + b * b;
    if (!(s2 > 0)) throw NumericError("degenerate similarity transform");
    const double ia = a / s2, ib = -b / s2;
    return {ia, ib, -(ia * tx - ib * ty), -(ib * tx + ia * ty)};
  }

  /// this ∘ other (apply `other` first).
  SimilarityTransform compose(const SimilarityTransform& other) const {
    return {a * other.a - b * other.b, a * other.b + b * other.a, a * other.tx - b * other.ty + tx,
            b * other.tx + a * other.ty + ty};
  }

  bool operator==(const SimilarityTransform&) const = default;
};

/// Target landmark layout in output-crop coordinates.
struct CanonicalTemplate {
  std::array<Point, kLandmarkCount> points{};
  std::size_t size = 224;

  /// Shipped symmetric mean-face layout at 224x224.
  static CanonicalTemplate standard();

  /// Same layout rescaled to a square crop of `out_size` pixels.
  CanonicalTemplate scaled_to(std::size_t out_size) const {
    CanonicalTemplate t;
    t.size = out_size;
    const double k = static_cast<double>(out_size) / static_cast<double>(size);
    for (std::size_t i = 0; i < kLandmarkCount; ++i) t.points[i] = {points[i].x * k, points[i].y * k};
    return t;
  }
};

inline CanonicalTemplate CanonicalTemplate::standard() {
  // 0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth (iBUG order).
  static constexpr std::array<Point, kLandmarkCount> kPoints = {{
      {34.0000, 96.0000},   {35.4987, 113.7922},  {39.9374, 130.9007},  {47.1454, 146.6680},
      {56.8457, 160.4881},  {68.6655, 171.8300},  {82.1507, 180.2578},  {96.7830, 185.4476},
      {112.0000, 187.2000}, {127.2170, 185.4476}, {141.8493, 180.2578}, {155.3345, 171.8300},
      {167.1543, 160.4881}, {176.8546, 146.6680}, {184.0626, 130.9007}, {188.5013, 113.7922},
      {190.0000, 96.0000},  {52.0000, 72.0000},   {65.0000, 64.9289},   {78.0000, 62.0000},
      {91.0000, 64.9289},   {104.0000, 72.0000},  {120.0000, 72.0000},  {133.0000, 64.9289},
      {146.0000, 62.0000},  {159.0000, 64.9289},  {172.0000, 72.0000},  {112.0000, 90.0000},
      {112.0000, 102.0000}, {112.0000, 114.0000}, {112.0000, 126.0000}, {92.0000, 142.0000},
      {102.0000, 140.0000}, {112.0000, 138.0000}, {122.0000, 140.0000}, {132.0000, 142.0000},
      {58.0000, 98.0000},   {67.0000, 91.0000},   {80.0000, 91.0000},   {90.0000, 98.0000},
      {80.0000, 103.0000},  {67.0000, 103.0000},  {134.0000, 98.0000},  {144.0000, 91.0000},
      {157.0000, 91.0000},  {166.0000, 98.0000},  {157.0000, 103.0000}, {144.0000, 103.0000},
      {76.0000, 170.0000},  {90.0000, 162.0000},  {103.0000, 158.0000}, {112.0000, 160.0000},
      {121.0000, 158.0000}, {134.0000, 162.0000}, {148.0000, 170.0000}, {134.0000, 180.0000},
      {121.0000, 184.0000}, {112.0000, 185.0000}, {103.0000, 184.0000}, {90.0000, 180.0000},
      {84.0000, 170.0000},  {102.0000, 166.0000}, {112.0000, 167.0000}, {122.0000, 166.0000},
      {140.0000, 170.0000}, {122.0000, 174.0000}, {112.0000, 175.0000}, {102.0000, 174.0000},
  }};
  CanonicalTemplate t;
  t.points = kPoints;
  t.size = 224;
  return t;
}

/// Least-squares similarity mapping `from` onto `to` (2-D Procrustes with
/// uniform scale; the [[a,-b],[b,a]] parametrization excludes reflections).
inline SimilarityTransform fit_similarity(std::span<const Point> from, std::span<const Point> to) {
  if (from.size() != to.size() || from.empty()) throw ValidationError("point sets differ in size");
  const double n = static_cast<double>(from.size());
  double fx = 0, fy = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    fx += from[i].x;
    fy += from[i].y;
    tx += to[i].x;
    ty += to[i].y;
  }
  fx /= n;
  fy /= n;
  tx /= n;
  ty /= n;
  double dot = 0, cross = 0, norm = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double px = from[i].x - fx, py = from[i].y - fy;
    const double qx = to[i].x - tx, qy = to[i].y - ty;
    dot += px * qx + py * qy;
    cross += px * qy - py * qx;
    norm += px * px + py * py;
  }
  if (!(norm > 0)) throw ValidationError("degenerate landmark configuration");
  SimilarityTransform t{dot / norm, cross / norm, 0, 0};
  if (!(t.a * t.a + t.b * t.b > 0)) throw ValidationError("degenerate similarity estimate");
  t.tx = tx - (t.a * fx - t.b * fy);
  t.ty = ty - (t.b * fx + t.a * fy);
  return t;
}

/// Transform taking the frame's landmarks onto the canonical template.
inline SimilarityTransform estimate_similarity(const LandmarkSet& landmarks, const CanonicalTemplate& tmpl) {
  validate_landmarks(landmarks.points);
  return fit_similarity(landmarks.points, tmpl.points);
}

/// Root-mean-square distance between T(from[i]) and to[i].
inline double alignment_rmse(const SimilarityTransform& t, std::span<const Point> from, std::span<const Point> to) {
  double acc = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const Point p = t.apply(from[i]);
    acc += (p.x - to[i].x) * (p.x - to[i].x) + (p.y - to[i].y) * (p.y - to[i].y);
  }
  return std::sqrt(acc / static_cast<double>(from.size()));
}

/// Resamples `image` into an out_w x out_h crop. `t` maps source pixels to
/// crop pixels; each crop pixel reads T^-1(x, y) bilinearly. Reads that
/// fall outside the source raster produce black.
inline Image warp_crop(const Image& image, const SimilarityTransform& t, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw ShapeError("warp_crop: zero-area output");
  if (image.width == 0 || image.height == 0) throw ShapeError("warp_crop: empty input image");
  const SimilarityTransform inv = t.inverse();
  Image out(out_w, out_h);
  const double eps = 1e-9;
  const double max_x = static_cast<double>(image.width - 1), max_y = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      if (s.x < -eps || s.y < -eps || s.x > max_x + eps || s.y > max_y + eps) continue;
      const double sx = std::clamp(s.x, 0.0, max_x), sy = std::clamp(s.y, 0.0, max_y);
      std::size_t x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      if (image.width > 1 && x0 >= image.width - 1) x0 = image.width - 2;
      if (image.height > 1 && y0 >= image.height - 1) y0 = image.height - 2;
      const std::size_t x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1 - fx) + image.at(x1, y0, c) * fx;
        const double bot = image.at(x0, y1, c) * (1 - fx) + image.at(x1, y1, c) * fx;
        const double v = top * (1 - fy) + bot * fy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  return out;
}

inline Image warp_crop(const Image& image, const SimilarityTransform& t, std::size_t out_size) {
  return warp_crop(image, t, out_size, out_size);
}

struct ChannelStats {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

/// Channel-major tensor [3, H, W] of (pixel / 255 - mean) / std.
/// Defaults are the ImageNet statistics.
template <typename Real = double>
BasicTensor<Real> normalize(const Image& image, const ChannelStats& stats = {}) {
  for (double s : stats.stddev)
    if (!(s > 0)) throw ValidationError("normalize: standard deviation must be positive");
  const std::size_t hw = image.width * image.height;
  std::vector<Real> v(3 * hw);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      v[c * hw + i] = static_cast<Real>((image.pixels[i * 3 + c] / 255.0 - stats.mean[c]) / stats.stddev[c]);
  return BasicTensor<Real>(Shape{3, image.height, image.width}, std::move(v));
}

/// Mirrors columns. AU labels pass through untouched: every AU in the
/// Pain-ICU inventory is a bilateral code.
template <typename Labels>
std::pair<Image, Labels> hflip(const Image& image, Labels labels) {
  Image out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
  return {std::move(out), std::move(labels)};
}

inline Image hflip(const Image& image) { return hflip(image, 0).first; }

/// Landmark CSV: header frame_id,x0,y0,...,x67,y67; one row per frame.
inline std::vector<LandmarkSet> read_landmarks(const std::filesystem::path& path) {
  auto table = csv::read(path);
  if (table.header.size() != 1 + 2 * kLandmarkCount || table.header[0] != "frame_id")
    throw ValidationError(path.string() + ": landmark header must be frame_id,x0,y0,...,x67,y67");
  for (std::size_t i = 0; i < kLandmarkCount; ++i)
    if (table.header[1 + 2 * i] != "x" + std::to_string(i) || table.header[2 + 2 * i] != "y" + std::to_string(i))
      throw ValidationError(path.string() + ": unexpected landmark column " + table.header[1 + 2 * i]);
  std::vector<LandmarkSet> out;
  for (const auto& row : table.rows) {
    LandmarkSet set;
    set.frame_id = row[0];
    for (std::size_t i = 0; i < kLandmarkCount; ++i)
      set.points[i] = {csv::to_double(row[1 + 2 * i], "x" + std::to_string(i)),
                       csv::to_double(row[2 + 2 * i], "y" + std::to_string(i))};
    validate_landmarks(set.points);
    out.push_back(std::move(set));
  }
  return out;
}

inline void write_landmarks(const std::filesystem::path& path, std::span<const LandmarkSet> sets) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "frame_id";
  for (std::size_t i = 0; i < kLandmarkCount; ++i) out << ",x" << i << ",y" << i;
  out << '\n';
  out.precision(17);
  for (const auto& s : sets) {
    out << csv::quote(s.frame_id);
    for (const auto& p : s.points) out << ',' << p.x << ',' << p.y;
    out << '\n';
  }
}

}  // namespace aupipe
