#pragma once

#include "adaf/facegen.hpp"
#include "adaf/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

// Rec.601 luma of an (h*w) x 3 image as an h x w matrix.
inline Matrix<Real> to_gray(const Matrix<Real>& img, int h, int w) {
  if (img.rows() != static_cast<Eigen::Index>(h) * w || img.cols() != 3)
    throw std::invalid_argument("to_gray: image must be (h*w) x 3");
  Matrix<Real> g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
      g(y, x) = Real(0.299) * img(r, 0) + Real(0.587) * img(r, 1) + Real(0.114) * img(r, 2);
    }
  return g;
}

inline Matrix<Real> gaussian_window(int win, double sigma) {
  Matrix<Real> k(win, win);
  double c = (win - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      k(i, j) = std::exp(-d2 / (2.0 * sigma * sigma));
      sum += k(i, j);
    }
  k /= sum;
  return k;
}

// SSIM on grayscale matrices scaled to [0,1]: Gaussian window (11x11, sigma
// 1.5, shrunk to the largest odd size that fits small images), valid-region
// mean, K1=0.01, K2=0.03, L=1.
inline double ssim_gray(const Matrix<Real>& a, const Matrix<Real>& b, int win = 0,
                        double sigma = 1.5) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ssim: shape mismatch");
  int h = static_cast<int>(a.rows()), w = static_cast<int>(a.cols());
  if (win <= 0) {
    win = std::min(11, std::min(h, w));
    if (win % 2 == 0) --win;
  }
  if (win < 1 || win > std::min(h, w)) throw std::invalid_argument("ssim: window does not fit");
  const Matrix<Real> k = gaussian_window(win, sigma);
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;  // (K*L)^2 with L=1

  double acc = 0;
  long count = 0;
  for (int y0 = 0; y0 + win <= h; ++y0)
    for (int x0 = 0; x0 + win <= w; ++x0) {
      double mua = 0, mub = 0, ea2 = 0, eb2 = 0, eab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          double kv = k(i, j);
          double av = a(y0 + i, x0 + j), bv = b(y0 + i, x0 + j);
          mua += kv * av;
          mub += kv * bv;
          ea2 += kv * av * av;
          eb2 += kv * bv * bv;
          eab += kv * av * bv;
        }
      double va = ea2 - mua * mua, vb = eb2 - mub * mub, vab = eab - mua * mub;
      double s = ((2 * mua * mub + C1) * (2 * vab + C2)) /
                 ((mua * mua + mub * mub + C1) * (va + vb + C2));
      acc += s;
      ++count;
    }
  return acc / static_cast<double>(count);
}

inline double ssim(const Matrix<Real>& a, const Matrix<Real>& b, int h, int w) {
  return ssim_gray(to_gray(a, h, w), to_gray(b, h, w));
}

// Block-averaged color embedding: 8x8x3 block means, mean-centered (which
// cancels global brightness scaling) and unit-normalized.
struct IdentityEmbedder {
  int grid = 8;

  Vector<Real> embed(const Matrix<Real>& img, int h, int w) const {
    if (img.rows() != static_cast<Eigen::Index>(h) * w || img.cols() != 3)
      throw std::invalid_argument("embed: image must be (h*w) x 3");
    if (h < grid || w < grid) throw std::invalid_argument("embed: image smaller than grid");
    Vector<Real> e(static_cast<Eigen::Index>(grid) * grid * 3);
    Eigen::Index n = 0;
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx) {
        int y0 = gy * h / grid, y1 = (gy + 1) * h / grid;
        int x0 = gx * w / grid, x1 = (gx + 1) * w / grid;
        double s[3] = {0, 0, 0};
        long cnt = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
            for (int c = 0; c < 3; ++c) s[c] += img(r, c);
            ++cnt;
          }
        for (int c = 0; c < 3; ++c) e[n++] = static_cast<Real>(s[c] / cnt);
      }
    e.array() -= e.mean();
    Real nrm = e.norm();
    if (nrm > Real(0)) e /= nrm;
    return e;
  }
};

inline double cosine(const Vector<Real>& a, const Vector<Real>& b) {
  Real na = a.norm(), nb = b.norm();
  if (na == Real(0) || nb == Real(0)) return 0.0;
  return static_cast<double>(a.dot(b) / (na * nb));
}

// Normalized cross-correlation against a rendered canonical face. The
// decision threshold is calibrated on a clean set (5% failure quantile) and
// recorded alongside any report using it.
struct FaceDetector {
  Matrix<Real> tmpl;  // h x w grayscale
  double threshold = 0.0;

  static FaceDetector make(int h, int w) {
    FaceDetector d;
    d.tmpl = to_gray(render_face(mean_identity(), ViewJitter{}, h, w), h, w);
    return d;
  }

  double score(const Matrix<Real>& img, int h, int w) const {
    Matrix<Real> g = to_gray(img, h, w);
    if (g.rows() != tmpl.rows() || g.cols() != tmpl.cols())
      throw std::invalid_argument("detector: image size does not match template");
    Matrix<Real> ga = g.array() - g.mean();
    Matrix<Real> ta = tmpl.array() - tmpl.mean();
    Real denom = ga.norm() * ta.norm();
    if (denom == Real(0)) return 0.0;
    return static_cast<double>((ga.array() * ta.array()).sum() / denom);
  }

  bool detect(const Matrix<Real>& img, int h, int w) const {
    return score(img, h, w) >= threshold;
  }

  // Sets threshold to the 5% quantile of clean scores and returns it.
  double calibrate(const std::vector<Matrix<Real>>& clean, int h, int w) {
    if (clean.empty()) throw std::invalid_argument("detector: empty calibration set");
    std::vector<double> s;
    s.reserve(clean.size());
    for (const auto& im : clean) s.push_back(score(im, h, w));
    std::sort(s.begin(), s.end());
    auto idx = static_cast<std::size_t>(0.05 * (s.size() - 1));
    threshold = s[idx];
    return threshold;
  }
};

struct FdfrResult {
  double rate = 0;
  int failures = 0, total = 0;
};

inline FdfrResult fdfr(const std::vector<Matrix<Real>>& generated, const FaceDetector& det,
                       int h, int w) {
  if (generated.empty()) throw std::invalid_argument("fdfr: empty image list");
  FdfrResult r;
  r.total = static_cast<int>(generated.size());
  for (const auto& im : generated)
    if (!det.detect(im, h, w)) ++r.failures;
  r.rate = static_cast<double>(r.failures) / r.total;
  return r;
}

struct IsmResult {
  bool defined = false;
  double value = 0;
  int used = 0, total = 0;
};

// Mean cosine between detected generated images and the mean clean-reference
// embedding. Detection failures are excluded and counted; if everything
// fails, the score is reported as undefined rather than zero.
inline IsmResult ism(const std::vector<Matrix<Real>>& generated,
                     const std::vector<Matrix<Real>>& refs, const IdentityEmbedder& emb,
                     const FaceDetector& det, int h, int w) {
  if (generated.empty() || refs.empty())
    throw std::invalid_argument("ism: image lists must be non-empty");
  Vector<Real> mean_ref = Vector<Real>::Zero(static_cast<Eigen::Index>(emb.grid) * emb.grid * 3);
  for (const auto& r : refs) mean_ref += emb.embed(r, h, w);
  mean_ref /= static_cast<Real>(refs.size());

  IsmResult out;
  out.total = static_cast<int>(generated.size());
  double acc = 0;
  for (const auto& g : generated) {
    if (!det.detect(g, h, w)) continue;
    acc += cosine(emb.embed(g, h, w), mean_ref);
    ++out.used;
  }
  if (out.used > 0) {
    out.defined = true;
    out.value = acc / out.used;
  }
  return out;
}

// Interior Laplacian magnitude, a cheap high-frequency energy measure.
inline double laplacian_energy(const Matrix<Real>& img, int h, int w) {
  Matrix<Real> g = to_gray(img, h, w);
  if (h < 3 || w < 3) throw std::invalid_argument("laplacian_energy: image too small");
  double acc = 0;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x)
      acc += std::abs(4 * g(y, x) - g(y - 1, x) - g(y + 1, x) - g(y, x - 1) - g(y, x + 1));
  return acc / (static_cast<double>(h - 2) * (w - 2));
}

// Pluggable quality metric: any callable over an image batch. The default
// proxy is the relative deviation of mean high-frequency energy from a
// clean-set statistic. This is NOT BRISQUE or FID; only orderings are
// meaningful.
using QualityFn = std::function<double(const std::vector<Matrix<Real>>&)>;

inline QualityFn make_quality_proxy(const std::vector<Matrix<Real>>& clean, int h, int w) {
  if (clean.empty()) throw std::invalid_argument("quality proxy: empty clean set");
  double ref = 0;
  for (const auto& im : clean) ref += laplacian_energy(im, h, w);
  ref /= static_cast<double>(clean.size());
  return [ref, h, w](const std::vector<Matrix<Real>>& batch) {
    if (batch.empty()) return 0.0;
    double e = 0;
    for (const auto& im : batch) e += laplacian_energy(im, h, w);
    e /= static_cast<double>(batch.size());
    return std::abs(e - ref) / std::max(ref, 1e-12);
  };
}

// One (defense x prompt) cell of the evaluation grid.
struct MetricReport {
  std::string defense;
  std::string prompt;
  int identity = -1;
  bool present = true;      // false: inputs missing, cell reported absent
  double fdfr = 0;
  int fdfr_failures = 0, fdfr_total = 0;
  bool ism_defined = false;
  double ism = 0;
  int ism_used = 0;
  double ssim_mean = 0;
  double quality = 0;
};

}  // namespace adaf
