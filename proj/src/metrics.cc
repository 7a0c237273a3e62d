#include "qpress/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "qpress/errors.h"

namespace qpress {

namespace {

void CheckSameShape(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("image shapes differ: " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
  if (a.empty()) throw ShapeError("empty image");
}

// Single-channel plane.
struct Plane {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane Channel(const Image& img, int c) {
  Plane p{img.height(), img.width(), {}};
  p.v.resize(static_cast<size_t>(p.h) * p.w);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) p.at(y, x) = img.at(y, x, c);
  }
  return p;
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363,
                                                 0.1333};

std::array<double, kWindow> GaussianTaps() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - (kWindow - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (double& t : g) t /= sum;
  return g;
}

// Separable valid-mode filtering.
Plane Blur(const Plane& p) {
  static const auto taps = GaussianTaps();
  Plane rows{p.h, p.w - kWindow + 1, {}};
  rows.v.assign(static_cast<size_t>(rows.h) * rows.w, 0.0);
  for (int y = 0; y < rows.h; ++y) {
    for (int x = 0; x < rows.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * p.at(y, x + k);
      rows.at(y, x) = s;
    }
  }
  Plane out{p.h - kWindow + 1, rows.w, {}};
  out.v.assign(static_cast<size_t>(out.h) * out.w, 0.0);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * rows.at(y + k, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

Plane Product(const Plane& a, const Plane& b) {
  Plane r = a;
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] *= b.v[i];
  return r;
}

Plane Downsample(const Plane& p) {
  Plane r{p.h / 2, p.w / 2, {}};
  r.v.resize(static_cast<size_t>(r.h) * r.w);
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      r.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) +
                           p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
    }
  }
  return r;
}

struct SsimTerms {
  double ssim = 0.0;
  double cs = 0.0;
};

SsimTerms Ssim(const Plane& a, const Plane& b) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const Plane mu_a = Blur(a);
  const Plane mu_b = Blur(b);
  const Plane aa = Blur(Product(a, a));
  const Plane bb = Blur(Product(b, b));
  const Plane ab = Blur(Product(a, b));
  double ssim = 0.0;
  double cs = 0.0;
  for (size_t i = 0; i < mu_a.v.size(); ++i) {
    const double ma = mu_a.v[i];
    const double mb = mu_b.v[i];
    const double var_a = aa.v[i] - ma * ma;
    const double var_b = bb.v[i] - mb * mb;
    const double cov = ab.v[i] - ma * mb;
    const double contrast = (2.0 * cov + c2) / (var_a + var_b + c2);
    cs += contrast;
    ssim += contrast * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
  }
  const auto n = static_cast<double>(mu_a.v.size());
  return {ssim / n, cs / n};
}

}  // namespace

double Mse(const Image& a, const Image& b) {
  CheckSameShape(a, b);
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double Psnr(const Image& a, const Image& b) {
  const double mse = Mse(a, b);
  if (mse == 0.0) return kPsnrIdentical;
  return std::min(kPsnrIdentical, -10.0 * std::log10(mse));
}

double MsSsim(const Image& a, const Image& b) {
  CheckSameShape(a, b);
  constexpr int kMinSide = kMsSsimMinSide;
  static_assert(kMinSide == (kWindow - 1) * 16 + 1);
  if (a.height() < kMinSide || a.width() < kMinSide) {
    throw ShapeError("MS-SSIM needs images of at least " +
                     std::to_string(kMinSide) + " pixels per side");
  }
  double total = 0.0;
  for (int c = 0; c < Image::kChannels; ++c) {
    Plane pa = Channel(a, c);
    Plane pb = Channel(b, c);
    double value = 1.0;
    for (size_t s = 0; s < kScaleWeights.size(); ++s) {
      const SsimTerms t = Ssim(pa, pb);
      const bool last = s + 1 == kScaleWeights.size();
      const double term = std::max(0.0, last ? t.ssim : t.cs);
      value *= std::pow(term, kScaleWeights[s]);
      if (!last) {
        pa = Downsample(pa);
        pb = Downsample(pb);
      }
    }
    total += value;
  }
  return total / Image::kChannels;
}

namespace {

struct Tap {
  int i0 = 0;
  int i1 = 0;
  double w1 = 0.0;  // weight of i1; i0 gets 1 − w1
};

std::vector<Tap> ResizeTaps(int in, int out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Image ResizeBilinear(const Image& image, int height, int width) {
  if (image.empty() || height <= 0 || width <= 0) {
    throw ShapeError("cannot resize an empty image");
  }
  const auto ty = ResizeTaps(image.height(), height);
  const auto tx = ResizeTaps(image.width(), width);
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - b.w1) * image.at(a.i0, b.i0, c) +
                           b.w1 * image.at(a.i0, b.i1, c);
        const double bottom = (1.0 - b.w1) * image.at(a.i1, b.i0, c) +
                              b.w1 * image.at(a.i1, b.i1, c);
        out.at(y, x, c) = (1.0 - a.w1) * top + a.w1 * bottom;
      }
    }
  }
  return out;
}

Image ResizeBilinearAdjoint(const Image& grad, int height, int width) {
  const auto ty = ResizeTaps(height, grad.height());
  const auto tx = ResizeTaps(width, grad.width());
  Image out(height, width, 0.0);
  for (int y = 0; y < grad.height(); ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < grad.width(); ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < Image::kChannels; ++c) {
        const double g = grad.at(y, x, c);
        out.at(a.i0, b.i0, c) += (1.0 - a.w1) * (1.0 - b.w1) * g;
        out.at(a.i0, b.i1, c) += (1.0 - a.w1) * b.w1 * g;
        out.at(a.i1, b.i0, c) += a.w1 * (1.0 - b.w1) * g;
        out.at(a.i1, b.i1, c) += a.w1 * b.w1 * g;
      }
    }
  }
  return out;
}

}  // namespace qpress
