#pragma once

#include "adaf/rng.hpp"
#include "adaf/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

// Parametric face: 8 reals with documented ranges. Distinct identities must
// differ by >= kIdentityMargin in at least one normalized parameter (and by
// >= kIdentityL2Margin overall) so the toy identity embedder can tell them
// apart.
struct SyntheticIdentity {
  int label = 0;
  double face_rx = 0.31;     // half-width, fraction of image width   [0.26, 0.36]
  double face_ry = 0.38;     // half-height, fraction of image height [0.32, 0.44]
  double eye_dx = 0.135;     // eye offset from center, fraction of w [0.10, 0.17]
  double eye_r = 0.042;      // eye radius, fraction of width         [0.030, 0.055]
  double skin_hue = 0.5;     // palette position                      [0, 1]
  double mouth_curve = 0.0;  // smile curvature                       [-0.5, 0.5]
  double mouth_w = 0.14;     // mouth half-width, fraction of width   [0.10, 0.18]
  double bg_shade = 0.5;     // background gray level                 [0.15, 0.85]

  // Parameters rescaled to [0,1] for distance computations.
  std::array<double, 8> normalized() const {
    auto unit = [](double v, double lo, double hi) { return (v - lo) / (hi - lo); };
    return {unit(face_rx, 0.26, 0.36), unit(face_ry, 0.32, 0.44),
            unit(eye_dx, 0.10, 0.17),  unit(eye_r, 0.030, 0.055),
            skin_hue,                  unit(mouth_curve, -0.5, 0.5),
            unit(mouth_w, 0.10, 0.18), unit(bg_shade, 0.15, 0.85)};
  }

  std::array<double, 8> raw() const {
    return {face_rx, face_ry, eye_dx, eye_r, skin_hue, mouth_curve, mouth_w, bg_shade};
  }

  static SyntheticIdentity from_raw(const std::vector<double>& p) {
    if (p.size() != 8) throw std::invalid_argument("identity: expected 8 parameters");
    SyntheticIdentity id;
    id.face_rx = p[0];
    id.face_ry = p[1];
    id.eye_dx = p[2];
    id.eye_r = p[3];
    id.skin_hue = p[4];
    id.mouth_curve = p[5];
    id.mouth_w = p[6];
    id.bg_shade = p[7];
    return id;
  }
};

inline constexpr double kIdentityMargin = 0.35;    // L-inf over normalized params
inline constexpr double kIdentityL2Margin = 0.70;  // L2 over normalized params

inline SyntheticIdentity sample_identity(Rng& rng, int label) {
  SyntheticIdentity id;
  id.label = label;
  id.face_rx = rng.uniform(0.26, 0.36);
  id.face_ry = rng.uniform(0.32, 0.44);
  id.eye_dx = rng.uniform(0.10, 0.17);
  id.eye_r = rng.uniform(0.030, 0.055);
  id.skin_hue = rng.uniform(0.0, 1.0);
  id.mouth_curve = rng.uniform(-0.5, 0.5);
  id.mouth_w = rng.uniform(0.10, 0.18);
  id.bg_shade = rng.uniform(0.15, 0.85);
  return id;
}

inline double identity_linf(const SyntheticIdentity& a, const SyntheticIdentity& b) {
  auto na = a.normalized(), nb = b.normalized();
  double m = 0;
  for (std::size_t i = 0; i < na.size(); ++i) m = std::max(m, std::abs(na[i] - nb[i]));
  return m;
}

inline double identity_l2(const SyntheticIdentity& a, const SyntheticIdentity& b) {
  auto na = a.normalized(), nb = b.normalized();
  double s = 0;
  for (std::size_t i = 0; i < na.size(); ++i) s += (na[i] - nb[i]) * (na[i] - nb[i]);
  return std::sqrt(s);
}

inline std::vector<SyntheticIdentity> make_identities(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("make_identities: n must be >= 1");
  std::vector<SyntheticIdentity> ids;
  long attempts = 0, cap = 2000L * n;
  while (static_cast<int>(ids.size()) < n) {
    if (++attempts > cap)
      throw std::runtime_error("make_identities: cannot satisfy separation margin");
    SyntheticIdentity cand = sample_identity(rng, static_cast<int>(ids.size()));
    bool ok = true;
    for (const auto& prev : ids)
      if (identity_linf(cand, prev) < kIdentityMargin || identity_l2(cand, prev) < kIdentityL2Margin) {
        ok = false;
        break;
      }
    if (ok) ids.push_back(cand);
  }
  return ids;
}

// Per-view pose/lighting jitter.
struct ViewJitter {
  double dx = 0, dy = 0;   // translation, fraction of image size
  double scale = 1;
  double brightness = 1;
};

inline ViewJitter sample_view(Rng& rng) {
  ViewJitter v;
  v.dx = rng.uniform(-0.03, 0.03);
  v.dy = rng.uniform(-0.03, 0.03);
  v.scale = rng.uniform(0.95, 1.05);
  v.brightness = rng.uniform(0.93, 1.07);
  return v;
}

namespace detail {
inline double smooth01(double a) {
  a = std::clamp(a, 0.0, 1.0);
  return a * a * (3.0 - 2.0 * a);
}
inline void lerp3(double* c, const double* to, double a) {
  for (int k = 0; k < 3; ++k) c[k] += (to[k] - c[k]) * a;
}
}  // namespace detail

// Renders one view as an (h*w) x 3 row-major matrix in [0,1]. Purely
// analytic, so identical inputs give bitwise identical pixels.
inline Matrix<Real> render_face(const SyntheticIdentity& id, const ViewJitter& v, int h, int w) {
  if (h < 8 || w < 8) throw std::invalid_argument("render_face: image too small");
  Matrix<Real> img(static_cast<Eigen::Index>(h) * w, 3);

  const double cx = (0.5 + v.dx) * w;
  const double cy = (0.52 + v.dy) * h;
  const double rx = id.face_rx * w * v.scale;
  const double ry = id.face_ry * h * v.scale;

  const double stops[3][3] = {{0.96, 0.80, 0.68}, {0.80, 0.60, 0.46}, {0.58, 0.42, 0.30}};
  double skin[3];
  {
    double p = id.skin_hue * 2.0;
    int s = p < 1.0 ? 0 : 1;
    double a = p - s;
    for (int k = 0; k < 3; ++k) skin[k] = stops[s][k] + (stops[s + 1][k] - stops[s][k]) * a;
  }
  const double hair_shade = 0.10 + 0.25 * (1.0 - id.skin_hue);
  const double hair[3] = {hair_shade * 1.15, hair_shade * 0.85, hair_shade * 0.7};
  const double sclera[3] = {0.93, 0.93, 0.90};
  const double pupil[3] = {0.08, 0.07, 0.10};
  const double lip[3] = {0.55, 0.20, 0.22};

  const double eye_cy = cy - 0.18 * ry;
  const double eye_off = id.eye_dx * w * v.scale;
  const double er = id.eye_r * w * v.scale * 1.6;
  const double mouth_cy = cy + 0.42 * ry;
  const double mw = id.mouth_w * w * v.scale;
  const double mth = std::max(0.8, 0.020 * h * v.scale);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double fx = x + 0.5, fy = y + 0.5;
      double bgl = id.bg_shade + 0.10 * (fy / h - 0.5);
      double c[3] = {bgl * 0.95, bgl * 0.98, bgl};

      double e = ((fx - cx) / rx) * ((fx - cx) / rx) + ((fy - cy) / ry) * ((fy - cy) / ry);
      double face_a = detail::smooth01((1.12 - e) / 0.24);
      detail::lerp3(c, skin, face_a);

      double hx = (fx - cx) / (1.02 * rx);
      double hy = (fy - (cy - 0.62 * ry)) / (0.72 * ry);
      if (fy < cy - 0.30 * ry) {
        double he = hx * hx + hy * hy;
        detail::lerp3(c, hair, detail::smooth01((1.05 - he) / 0.22) * face_a);
      }

      for (int side = -1; side <= 1; side += 2) {
        double ex = fx - (cx + side * eye_off);
        double ey = fy - eye_cy;
        double d = std::sqrt(ex * ex + ey * ey);
        detail::lerp3(c, sclera, detail::smooth01((er - d) / 1.2));
        detail::lerp3(c, pupil, detail::smooth01((er * 0.55 - d) / 1.0));
        double by = fy - (eye_cy - 2.1 * er);
        double brow = detail::smooth01((er * 0.4 - std::abs(by)) / 1.0) *
                      detail::smooth01((er * 1.6 - std::abs(ex)) / 1.5);
        detail::lerp3(c, hair, brow);
      }

      double u = (fx - cx) / mw;
      if (std::abs(u) <= 1.2) {
        double ym = mouth_cy + id.mouth_curve * (u * u - 0.4) * 0.10 * h * v.scale;
        double a = detail::smooth01((mth - std::abs(fy - ym)) / 1.0) *
                   detail::smooth01((1.0 - std::abs(u)) / 0.25);
        detail::lerp3(c, lip, a);
      }

      Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
      for (int k = 0; k < 3; ++k)
        img(row, k) = std::clamp(c[k] * v.brightness, 0.0, 1.0);
    }
  }
  return img;
}

// Canonical mid-range identity, used for the detector template.
inline SyntheticIdentity mean_identity() { return SyntheticIdentity{}; }

}  // namespace adaf
