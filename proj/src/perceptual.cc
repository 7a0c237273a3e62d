#include "qpress/perceptual.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "qpress/errors.h"

namespace qpress {

namespace {

constexpr char kMagic[4] = {'Q', 'P', 'L', 'P'};
constexpr double kNormEps = 1e-10;

// Channel-major feature map.
struct Features {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Features() = default;
  Features(int channels, int height, int width)
      : c(channels), h(height), w(width),
        v(static_cast<size_t>(channels) * height * width, 0.0) {}
  double& at(int ch, int y, int x) {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }
};

Features FromImage(const Image& img) {
  Features f(Image::kChannels, img.height(), img.width());
  for (int ch = 0; ch < f.c; ++ch) {
    for (int y = 0; y < f.h; ++y) {
      for (int x = 0; x < f.w; ++x) f.at(ch, y, x) = 2.0 * img.at(y, x, ch) - 1.0;
    }
  }
  return f;
}

Features Conv(const FeatureNetDistance::Layer& L, const Features& in) {
  Features out(L.out, in.h, in.w);
  for (int o = 0; o < L.out; ++o) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) out.at(o, y, x) = L.bias[o];
    }
    for (int i = 0; i < L.in; ++i) {
      const double* k = &L.kernel[(static_cast<size_t>(o) * L.in + i) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wk = k[ky * 3 + kx];
          const int y0 = std::max(0, 1 - ky);
          const int y1 = std::min(in.h, in.h + 1 - ky);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(in.w, in.w + 1 - kx);
          for (int y = y0; y < y1; ++y) {
            const double* src = &in.v[(static_cast<size_t>(i) * in.h + y + ky - 1) * in.w];
            double* dst = &out.v[(static_cast<size_t>(o) * in.h + y) * in.w];
            for (int x = x0; x < x1; ++x) dst[x] += wk * src[x + kx - 1];
          }
        }
      }
    }
  }
  return out;
}

Features ConvBackward(const FeatureNetDistance::Layer& L, const Features& d_out) {
  Features d_in(L.in, d_out.h, d_out.w);
  for (int o = 0; o < L.out; ++o) {
    for (int i = 0; i < L.in; ++i) {
      const double* k = &L.kernel[(static_cast<size_t>(o) * L.in + i) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wk = k[ky * 3 + kx];
          const int y0 = std::max(0, 1 - ky);
          const int y1 = std::min(d_out.h, d_out.h + 1 - ky);
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(d_out.w, d_out.w + 1 - kx);
          for (int y = y0; y < y1; ++y) {
            double* dst = &d_in.v[(static_cast<size_t>(i) * d_out.h + y + ky - 1) * d_out.w];
            const double* src = &d_out.v[(static_cast<size_t>(o) * d_out.h + y) * d_out.w];
            for (int x = x0; x < x1; ++x) dst[x + kx - 1] += wk * src[x];
          }
        }
      }
    }
  }
  return d_in;
}

Features Pool(const Features& f) {
  Features out(f.c, f.h / 2, f.w / 2);
  for (int ch = 0; ch < f.c; ++ch) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        out.at(ch, y, x) = 0.25 * (f.at(ch, 2 * y, 2 * x) + f.at(ch, 2 * y, 2 * x + 1) +
                                   f.at(ch, 2 * y + 1, 2 * x) +
                                   f.at(ch, 2 * y + 1, 2 * x + 1));
      }
    }
  }
  return out;
}

Features PoolBackward(const Features& d_out, int h, int w) {
  Features d_in(d_out.c, h, w);
  for (int ch = 0; ch < d_out.c; ++ch) {
    for (int y = 0; y < d_out.h; ++y) {
      for (int x = 0; x < d_out.w; ++x) {
        const double g = 0.25 * d_out.at(ch, y, x);
        d_in.at(ch, 2 * y, 2 * x) += g;
        d_in.at(ch, 2 * y, 2 * x + 1) += g;
        d_in.at(ch, 2 * y + 1, 2 * x) += g;
        d_in.at(ch, 2 * y + 1, 2 * x + 1) += g;
      }
    }
  }
  return d_in;
}

// Post-ReLU activations of every layer.
std::vector<Features> Activations(const std::vector<FeatureNetDistance::Layer>& layers,
                                  const Image& img) {
  std::vector<Features> taps;
  Features x = FromImage(img);
  for (size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) x = Pool(x);
    x = Conv(layers[l], x);
    for (double& t : x.v) t = std::max(0.0, t);
    taps.push_back(x);
  }
  return taps;
}

// Per-pixel channel norms.
std::vector<double> Norms(const Features& f) {
  std::vector<double> n(static_cast<size_t>(f.h) * f.w, 0.0);
  for (int ch = 0; ch < f.c; ++ch) {
    for (size_t p = 0; p < n.size(); ++p) {
      const double v = f.v[static_cast<size_t>(ch) * n.size() + p];
      n[p] += v * v;
    }
  }
  for (double& t : n) t = std::sqrt(t);
  return n;
}

template <typename T>
void Put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T Get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated perceptual weight file '" + path.string() + "'");
  return v;
}

}  // namespace

FeatureNetDistance::FeatureNetDistance(std::vector<Layer> layers)
    : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("feature network needs at least one layer");
  int in = Image::kChannels;
  for (const Layer& L : layers_) {
    if (L.in != in || L.out < 1 ||
        L.kernel.size() != static_cast<size_t>(L.out) * L.in * 9 ||
        L.bias.size() != static_cast<size_t>(L.out) ||
        L.weights.size() != static_cast<size_t>(L.out)) {
      throw ConfigError("inconsistent feature network layer shapes");
    }
    for (double w : L.weights) {
      if (w < 0.0) throw ConfigError("feature channel weights must be nonnegative");
    }
    in = L.out;
  }
}

FeatureNetDistance FeatureNetDistance::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("perceptual weight file '" + path.string() + "' not found or unreadable");
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("'" + path.string() + "' is not a perceptual weight file");
  }
  const auto count = Get<uint32_t>(in, path);
  if (count == 0 || count > 64) throw FormatError("implausible layer count in '" + path.string() + "'");
  std::vector<Layer> layers(count);
  for (Layer& L : layers) {
    L.in = static_cast<int>(Get<uint32_t>(in, path));
    L.out = static_cast<int>(Get<uint32_t>(in, path));
    if (L.in < 1 || L.out < 1 || L.in > 4096 || L.out > 4096) {
      throw FormatError("implausible layer width in '" + path.string() + "'");
    }
    L.kernel.resize(static_cast<size_t>(L.out) * L.in * 9);
    L.bias.resize(L.out);
    L.weights.resize(L.out);
    for (double& v : L.kernel) v = Get<double>(in, path);
    for (double& v : L.bias) v = Get<double>(in, path);
    for (double& v : L.weights) v = Get<double>(in, path);
  }
  return FeatureNetDistance(std::move(layers));
}

void FeatureNetDistance::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  Put<uint32_t>(out, static_cast<uint32_t>(layers_.size()));
  for (const Layer& L : layers_) {
    Put<uint32_t>(out, static_cast<uint32_t>(L.in));
    Put<uint32_t>(out, static_cast<uint32_t>(L.out));
    for (double v : L.kernel) Put(out, v);
    for (double v : L.bias) Put(out, v);
    for (double v : L.weights) Put(out, v);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FeatureNetDistance FeatureNetDistance::Random(const std::vector<int>& widths,
                                              Rng& rng) {
  if (widths.size() < 2 || widths.front() != Image::kChannels) {
    throw ConfigError("feature network widths must start at 3 and have a layer");
  }
  std::vector<Layer> layers;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer L;
    L.in = widths[l];
    L.out = widths[l + 1];
    const double s = std::sqrt(2.0 / (9.0 * L.in));
    L.kernel.resize(static_cast<size_t>(L.out) * L.in * 9);
    for (double& v : L.kernel) v = s * rng.Normal();
    L.bias.resize(L.out);
    for (double& v : L.bias) v = 0.1 * rng.Normal();
    L.weights.resize(L.out);
    for (double& v : L.weights) v = rng.Uniform();
    layers.push_back(std::move(L));
  }
  return FeatureNetDistance(std::move(layers));
}

double FeatureNetDistance::Distance(const Image& a, const Image& b) const {
  return DistanceAndGrad(a, b, nullptr);
}

double FeatureNetDistance::DistanceAndGrad(const Image& a, const Image& b,
                                           Image* d_b) const {
  if (a.height() != b.height() || a.width() != b.width() || a.empty()) {
    throw ShapeError("perceptual distance needs two images of equal shape");
  }
  if (layers_.empty()) throw ConfigError("perceptual metric has no layers");
  const auto fa = Activations(layers_, a);
  const auto fb = Activations(layers_, b);
  double total = 0.0;
  std::vector<Features> d_taps(layers_.size());
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Features& A = fa[l];
    const Features& B = fb[l];
    const auto na = Norms(A);
    const auto nb = Norms(B);
    const size_t hw = na.size();
    const double inv_hw = 1.0 / static_cast<double>(hw);
    Features d_nb(B.c, B.h, B.w);
    for (int ch = 0; ch < A.c; ++ch) {
      const double w = layers_[l].weights[ch];
      for (size_t p = 0; p < hw; ++p) {
        const size_t i = static_cast<size_t>(ch) * hw + p;
        const double diff = A.v[i] / (na[p] + kNormEps) - B.v[i] / (nb[p] + kNormEps);
        total += w * diff * diff * inv_hw;
        d_nb.v[i] = -2.0 * w * diff * inv_hw;
      }
    }
    if (d_b == nullptr) continue;
    // Through the channel normalization f / (|f| + eps).
    Features d_f(B.c, B.h, B.w);
    for (size_t p = 0; p < hw; ++p) {
      const double r = nb[p];
      const double s = r + kNormEps;
      double dot = 0.0;
      for (int ch = 0; ch < B.c; ++ch) {
        const size_t i = static_cast<size_t>(ch) * hw + p;
        dot += d_nb.v[i] * B.v[i];
      }
      for (int ch = 0; ch < B.c; ++ch) {
        const size_t i = static_cast<size_t>(ch) * hw + p;
        double g = d_nb.v[i] / s;
        if (r > 0.0) g -= B.v[i] * dot / (s * s * r);
        d_f.v[i] = g;
      }
    }
    d_taps[l] = std::move(d_f);
  }
  if (d_b != nullptr) {
    Features d;
    for (size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 == layers_.size()) {
        d = d_taps[l];
      } else {
        for (size_t i = 0; i < d.v.size(); ++i) d.v[i] += d_taps[l].v[i];
      }
      // ReLU.
      for (size_t i = 0; i < d.v.size(); ++i) {
        if (fb[l].v[i] <= 0.0) d.v[i] = 0.0;
      }
      d = ConvBackward(layers_[l], d);
      if (l > 0) d = PoolBackward(d, fb[l - 1].h, fb[l - 1].w);
    }
    *d_b = Image(b.height(), b.width());
    for (int ch = 0; ch < Image::kChannels; ++ch) {
      for (int y = 0; y < b.height(); ++y) {
        for (int x = 0; x < b.width(); ++x) d_b->at(y, x, ch) = 2.0 * d.at(ch, y, x);
      }
    }
  }
  return total;
}

}  // namespace qpress
