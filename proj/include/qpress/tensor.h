#ifndef QPRESS_TENSOR_H_
#define QPRESS_TENSOR_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace qpress {

// Token sequences are L×d, one token per row.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

// A trainable tensor and its accumulated gradient.
struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  explicit Param(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void ZeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamVisitor = std::function<void(const std::string& name, Param& p)>;

// Deterministic random source. Distributions are derived by hand from the
// raw 64-bit engine output so sequences do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }
  // Uniform on [0, 1).
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Standard normal via Box-Muller.
  double Normal() {
    double u1 = Uniform();
    const double u2 = Uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  std::string Serialize() const;
  void Deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

inline Matrix GaussianMatrix(Eigen::Index rows, Eigen::Index cols,
                             double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.Normal();
  return m;
}

}  // namespace qpress

#endif  // QPRESS_TENSOR_H_
