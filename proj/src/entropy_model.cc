#include "qpress/entropy_model.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "qpress/errors.h"

namespace qpress {

namespace {

double Softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr int kMaxWidth = 16;

}  // namespace

LatentCode Quantize(const LatentCode& latent, QuantizerMode mode, Rng& rng) {
  LatentCode out = latent;
  if (mode == QuantizerMode::kRound) {
    if (latent.quantized) {
      std::cerr << "warning: latent is already quantized; round is a no-op\n";
      return out;
    }
    constexpr double kMax = std::numeric_limits<int32_t>::max();
    constexpr double kMin = std::numeric_limits<int32_t>::min();
    for (Eigen::Index i = 0; i < out.values.size(); ++i) {
      // nearbyint honours the default round-to-nearest-even mode.
      const double r = std::nearbyint(out.values.data()[i]);
      if (!(r >= kMin && r <= kMax)) {
        throw NumericError("latent value outside the 32-bit integer range");
      }
      out.values.data()[i] = r + 0.0;  // -0 becomes +0, as after decoding
    }
    out.quantized = true;
    return out;
  }
  if (latent.quantized) {
    throw InputError("noise quantization applies to continuous latents only");
  }
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    out.values.data()[i] += rng.Uniform() - 0.5;
  }
  return out;
}

// ------------------------------------------------------- FactorizedPrior

struct FactorizedPrior::Trace {
  // Stage inputs and pre-nonlinearity outputs.
  std::array<std::array<double, kMaxWidth>, 8> input{};
  std::array<std::array<double, kMaxWidth>, 8> pre{};
};

FactorizedPrior::FactorizedPrior(int channels, std::vector<int> hidden_widths,
                                 double likelihood_floor)
    : channels_(channels), floor_(likelihood_floor) {
  if (channels <= 0) throw ConfigError("prior needs at least one channel");
  if (hidden_widths.empty() || hidden_widths.size() > 6) {
    throw ConfigError("prior supports 1 to 6 hidden stages");
  }
  widths_.push_back(1);
  for (int w : hidden_widths) {
    if (w < 1 || w > kMaxWidth) {
      throw ConfigError("prior stage width must be in [1, 16]");
    }
    widths_.push_back(w);
  }
  widths_.push_back(1);
  for (int k = 0; k < stages(); ++k) {
    const int in = widths_[k];
    const int out = widths_[k + 1];
    matrices.emplace_back(Matrix::Zero(channels, out * in));
    biases.emplace_back(Matrix::Zero(channels, out));
    if (k + 1 < stages()) factors.emplace_back(Matrix::Zero(channels, out));
  }
}

void FactorizedPrior::Init(double init_scale, Rng& rng) {
  const double scale = std::pow(init_scale, 1.0 / stages());
  for (int k = 0; k < stages(); ++k) {
    const double init = std::log(std::expm1(1.0 / scale / widths_[k + 1]));
    matrices[k].value.setConstant(init);
    for (Eigen::Index i = 0; i < biases[k].value.size(); ++i) {
      biases[k].value.data()[i] = rng.Uniform(-0.5, 0.5);
    }
    if (k + 1 < stages()) factors[k].value.setZero();
  }
}

double FactorizedPrior::LogitTraced(int channel, double x, Trace* trace) const {
  std::array<double, kMaxWidth> v{};
  std::array<double, kMaxWidth> u{};
  v[0] = x;
  for (int k = 0; k < stages(); ++k) {
    const int in = widths_[k];
    const int out = widths_[k + 1];
    const double* h = matrices[k].value.row(channel).data();
    const double* b = biases[k].value.row(channel).data();
    if (trace != nullptr) trace->input[k] = v;
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += Softplus(h[o * in + i]) * v[i];
      u[o] = acc;
    }
    if (trace != nullptr) trace->pre[k] = u;
    if (k + 1 < stages()) {
      const double* a = factors[k].value.row(channel).data();
      for (int o = 0; o < out; ++o) v[o] = u[o] + std::tanh(a[o]) * std::tanh(u[o]);
    } else {
      for (int o = 0; o < out; ++o) v[o] = u[o];
    }
  }
  return v[0];
}

double FactorizedPrior::LogitBackward(int channel, const Trace& trace,
                                      double d_logit) {
  std::array<double, kMaxWidth> dv{};
  dv[0] = d_logit;
  for (int k = stages() - 1; k >= 0; --k) {
    const int in = widths_[k];
    const int out = widths_[k + 1];
    std::array<double, kMaxWidth> du{};
    if (k + 1 < stages()) {
      const double* a = factors[k].value.row(channel).data();
      double* da = factors[k].grad.row(channel).data();
      for (int o = 0; o < out; ++o) {
        const double ta = std::tanh(a[o]);
        const double tu = std::tanh(trace.pre[k][o]);
        du[o] = dv[o] * (1.0 + ta * (1.0 - tu * tu));
        da[o] += dv[o] * tu * (1.0 - ta * ta);
      }
    } else {
      for (int o = 0; o < out; ++o) du[o] = dv[o];
    }
    const double* h = matrices[k].value.row(channel).data();
    double* dh = matrices[k].grad.row(channel).data();
    double* db = biases[k].grad.row(channel).data();
    std::array<double, kMaxWidth> d_in{};
    for (int o = 0; o < out; ++o) {
      db[o] += du[o];
      for (int i = 0; i < in; ++i) {
        const double raw = h[o * in + i];
        dh[o * in + i] += du[o] * trace.input[k][i] * Sigmoid(raw);
        d_in[i] += Softplus(raw) * du[o];
      }
    }
    dv = d_in;
  }
  return dv[0];
}

double FactorizedPrior::Logit(int channel, double x) const {
  return LogitTraced(channel, x, nullptr);
}

double FactorizedPrior::Cdf(int channel, double x) const {
  return Sigmoid(Logit(channel, x));
}

double FactorizedPrior::RawLikelihood(int channel, double y) const {
  const double lower = Logit(channel, y - 0.5);
  const double upper = Logit(channel, y + 0.5);
  // Evaluate on the side of the logistic where both terms are small.
  const double s = lower + upper > 0.0 ? -1.0 : 1.0;
  return std::max(0.0, s * (Sigmoid(s * upper) - Sigmoid(s * lower)));
}

double FactorizedPrior::Likelihood(int channel, double y) const {
  return std::max(RawLikelihood(channel, y), floor_);
}

Matrix FactorizedPrior::Likelihoods(const Matrix& latent) const {
  if (latent.cols() != channels_) {
    throw ShapeError("latent width " + std::to_string(latent.cols()) +
                     " != prior channels " + std::to_string(channels_));
  }
  Matrix p(latent.rows(), latent.cols());
  for (Eigen::Index r = 0; r < latent.rows(); ++r) {
    for (int c = 0; c < channels_; ++c) p(r, c) = Likelihood(c, latent(r, c));
  }
  return p;
}

double FactorizedPrior::RateBits(const Matrix& latent) const {
  const Matrix p = Likelihoods(latent);
  return -p.array().log().sum() / std::log(2.0);
}

double FactorizedPrior::RateBitsBackward(const Matrix& latent, double scale,
                                         Matrix* d_latent) {
  if (latent.cols() != channels_) {
    throw ShapeError("latent width does not match prior channels");
  }
  if (d_latent != nullptr) d_latent->setZero(latent.rows(), latent.cols());
  const double inv_ln2 = 1.0 / std::log(2.0);
  double bits = 0.0;
  Trace lower_trace;
  Trace upper_trace;
  for (Eigen::Index r = 0; r < latent.rows(); ++r) {
    for (int c = 0; c < channels_; ++c) {
      const double y = latent(r, c);
      const double lower = LogitTraced(c, y - 0.5, &lower_trace);
      const double upper = LogitTraced(c, y + 0.5, &upper_trace);
      const double s = lower + upper > 0.0 ? -1.0 : 1.0;
      const double su = Sigmoid(s * upper);
      const double sl = Sigmoid(s * lower);
      const double p = s * (su - sl);
      if (p <= floor_) {
        bits -= std::log(floor_) * inv_ln2;
        continue;
      }
      bits -= std::log(p) * inv_ln2;
      // d(−log2 p)/dp = −1/(p ln 2); dp/dupper = σ'(s·upper),
      // dp/dlower = −σ'(s·lower).
      const double d_p = -scale * inv_ln2 / p;
      const double d_upper = d_p * su * (1.0 - su);
      const double d_lower = -d_p * sl * (1.0 - sl);
      const double dx = LogitBackward(c, upper_trace, d_upper) +
                        LogitBackward(c, lower_trace, d_lower);
      if (d_latent != nullptr) (*d_latent)(r, c) = dx;
    }
  }
  return bits;
}

void FactorizedPrior::VisitParams(const ParamVisitor& visit) {
  for (int k = 0; k < stages(); ++k) {
    const std::string p = "prior.stage" + std::to_string(k);
    visit(p + ".matrix", matrices[k]);
    visit(p + ".bias", biases[k]);
    if (k + 1 < stages()) visit(p + ".factor", factors[k]);
  }
}

// ------------------------------------------------------------ CDF tables

QuantizedCdf QuantizePmf(std::span<const double> pmf, int32_t offset) {
  const size_t n = pmf.size();
  if (n == 0) throw CodingError("empty symbol support");
  if (n > kCdfTotal) throw CodingError("support exceeds CDF precision");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw CodingError("invalid pmf entry");
    total += p;
  }
  const uint32_t spare = kCdfTotal - static_cast<uint32_t>(n);
  std::vector<uint32_t> freq(n, 1);
  std::vector<double> remainder(n, 0.0);
  uint32_t assigned = static_cast<uint32_t>(n);
  for (size_t i = 0; i < n; ++i) {
    const double share = total > 0.0 ? pmf[i] / total * spare
                                     : static_cast<double>(spare) / n;
    const double whole = std::floor(share);
    freq[i] += static_cast<uint32_t>(whole);
    remainder[i] = share - whole;
    assigned += static_cast<uint32_t>(whole);
  }
  uint32_t left = kCdfTotal - assigned;
  if (left > 0) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return remainder[a] > remainder[b];
    });
    for (size_t i = 0; left > 0; i = (i + 1) % n, --left) ++freq[order[i]];
  }
  QuantizedCdf q;
  q.offset = offset;
  q.cdf.resize(n + 1);
  q.cdf[0] = 0;
  for (size_t i = 0; i < n; ++i) q.cdf[i + 1] = q.cdf[i] + freq[i];
  return q;
}

CdfTables BuildCdfTables(const FactorizedPrior& prior, int32_t lo, int32_t hi,
                         int max_width) {
  if (hi < lo) throw CodingError("empty support");
  const int64_t width = static_cast<int64_t>(hi) - lo + 1;
  if (width > max_width) {
    throw CodingError("symbol support [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "] wider than " +
                      std::to_string(max_width) + " symbols (diverged latent?)");
  }
  CdfTables tables;
  tables.lo = lo;
  tables.hi = hi;
  tables.channels.reserve(prior.channels());
  std::vector<double> pmf(static_cast<size_t>(width));
  for (int c = 0; c < prior.channels(); ++c) {
    for (int64_t i = 0; i < width; ++i) {
      pmf[i] = prior.RawLikelihood(c, static_cast<double>(lo + i));
    }
    tables.channels.push_back(QuantizePmf(pmf, lo));
  }
  return tables;
}

Support LatentSupport(const LatentCode& latent) {
  if (!latent.quantized) throw InputError("support requires a quantized latent");
  if (latent.values.size() == 0) throw InputError("empty latent");
  const double mn = latent.values.minCoeff();
  const double mx = latent.values.maxCoeff();
  constexpr double kLimit = 1e9;
  if (mn < -kLimit || mx > kLimit) throw CodingError("latent magnitude diverged");
  return {static_cast<int32_t>(mn) - 1, static_cast<int32_t>(mx) + 1};
}

double TableCrossEntropyBits(const CdfTables& tables, const LatentCode& latent) {
  double bits = 0.0;
  for (Eigen::Index r = 0; r < latent.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < latent.values.cols(); ++c) {
      const auto s = static_cast<int32_t>(latent.values(r, c));
      const QuantizedCdf& t = tables.channels.at(c);
      if (!t.Contains(s)) throw CodingError("symbol outside table support");
      bits -= std::log2(static_cast<double>(t.Frequency(s)) / kCdfTotal);
    }
  }
  return bits;
}

}  // namespace qpress
