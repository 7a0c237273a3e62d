#ifndef QPRESS_ENTROPY_MODEL_H_
#define QPRESS_ENTROPY_MODEL_H_

#include <cstdint>
#include <span>
#include <vector>

#include "qpress/tensor.h"
#include "qpress/transforms.h"

namespace qpress {

enum class QuantizerMode {
  kNoise,  // additive U(-1/2, 1/2); training only
  kRound,  // nearest integer, ties to even; coding
};

LatentCode Quantize(const LatentCode& latent, QuantizerMode mode, Rng& rng);

// Per-channel learned CDF c(x) = sigmoid(f(x)), where f is a composition of
// monotone stages u = softplus(H) v + b, v' = u + tanh(a) ⊙ tanh(u)
// (the last stage omits the nonlinearity). Every embedding dimension is one
// channel, shared by all queries.
class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  // hidden_widths are the inner stage widths, e.g. {3, 3, 3} for a
  // four-stage 1→3→3→3→1 network.
  FactorizedPrior(int channels, std::vector<int> hidden_widths,
                  double likelihood_floor = 1e-9);

  // Standard initialization: the composed map starts as an affine map of
  // slope 1/init_scale with random offsets.
  void Init(double init_scale, Rng& rng);

  int channels() const { return channels_; }
  int stages() const { return static_cast<int>(widths_.size()) - 1; }
  double likelihood_floor() const { return floor_; }

  double Logit(int channel, double x) const;
  double Cdf(int channel, double x) const;
  // c(y + 1/2) − c(y − 1/2), computed without cancellation in the tails.
  double RawLikelihood(int channel, double y) const;
  // RawLikelihood floored at likelihood_floor().
  double Likelihood(int channel, double y) const;

  // Elementwise floored likelihoods for an N × channels latent.
  Matrix Likelihoods(const Matrix& latent) const;
  // −Σ log2 p over all elements.
  double RateBits(const Matrix& latent) const;
  // Same value; adds scale·∂rate/∂params to the parameter gradients and
  // writes scale·∂rate/∂latent to d_latent when non-null.
  double RateBitsBackward(const Matrix& latent, double scale, Matrix* d_latent);

  void VisitParams(const ParamVisitor& visit);

  // Stage k: matrices[k] is channels × (out·in) (raw, pre-softplus),
  // biases[k] is channels × out, factors[k] (k < stages−1) is channels × out.
  std::vector<Param> matrices;
  std::vector<Param> biases;
  std::vector<Param> factors;

 private:
  struct Trace;
  double LogitTraced(int channel, double x, Trace* trace) const;
  // Backpropagates d_logit; returns d_x, accumulates param grads.
  double LogitBackward(int channel, const Trace& trace, double d_logit);

  int channels_ = 0;
  std::vector<int> widths_;  // 1, hidden..., 1
  double floor_ = 1e-9;
};

// Integer CDF over a contiguous symbol range [offset, offset + size()) with
// kCdfPrecision-bit probabilities: cdf[0] = 0, cdf[size()] = 2^precision and
// strictly increasing.
constexpr int kCdfPrecision = 16;
constexpr uint32_t kCdfTotal = 1u << kCdfPrecision;

struct QuantizedCdf {
  int32_t offset = 0;
  std::vector<uint32_t> cdf;

  int size() const { return static_cast<int>(cdf.size()) - 1; }
  bool Contains(int32_t symbol) const {
    return symbol >= offset && symbol - offset < size();
  }
  uint32_t Frequency(int32_t symbol) const {
    return cdf[symbol - offset + 1] - cdf[symbol - offset];
  }
  bool operator==(const QuantizedCdf&) const = default;
};

// Quantizes a probability vector (any nonnegative scale) so that every
// symbol keeps mass >= 1. Deterministic: leftover mass goes to the largest
// fractional remainders, ties to the lower index. An all-zero input yields
// the uniform table.
QuantizedCdf QuantizePmf(std::span<const double> pmf, int32_t offset);

struct CdfTables {
  int32_t lo = 0;
  int32_t hi = 0;
  std::vector<QuantizedCdf> channels;
};

// Per-channel tables over [lo, hi] built from the prior's integer
// likelihoods. Throws CodingError if the support is wider than max_width.
CdfTables BuildCdfTables(const FactorizedPrior& prior, int32_t lo, int32_t hi,
                         int max_width = 4096);

struct Support {
  int32_t lo = 0;
  int32_t hi = 0;
};

// [min − 1, max + 1] of a quantized latent.
Support LatentSupport(const LatentCode& latent);

// Σ −log2(freq / 2^16) of a quantized latent under per-channel tables.
double TableCrossEntropyBits(const CdfTables& tables, const LatentCode& latent);

}  // namespace qpress

#endif  // QPRESS_ENTROPY_MODEL_H_
