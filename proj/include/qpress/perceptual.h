#ifndef QPRESS_PERCEPTUAL_H_
#define QPRESS_PERCEPTUAL_H_

#include <filesystem>
#include <memory>
#include <vector>

#include "qpress/image.h"
#include "qpress/tensor.h"

namespace qpress {

// Learned perceptual distance between two images of equal shape.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;

  virtual double Distance(const Image& a, const Image& b) const = 0;
  // Distance plus its gradient with respect to b.
  virtual double DistanceAndGrad(const Image& a, const Image& b,
                                 Image* d_b) const = 0;
};

// Feature-network distance: a stack of 3×3 convolutions with ReLU and 2×2
// average pooling between layers. The activations after every ReLU are
// unit-normalized across channels; the distance is the sum over layers of
// the spatial mean of Σ_c w_c (f̂_a − f̂_b)². Inputs are mapped to [−1, 1].
class FeatureNetDistance : public PerceptualMetric {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> kernel;  // out × in × 3 × 3
    std::vector<double> bias;    // out
    std::vector<double> weights; // out, nonnegative channel weights
  };

  FeatureNetDistance() = default;
  explicit FeatureNetDistance(std::vector<Layer> layers);

  // Weight file "QPLP": magic, uint32 layer count, then per layer
  // uint32 in, uint32 out, float64 kernel, bias and channel weights.
  // Throws IoError naming the file when it cannot be read.
  static FeatureNetDistance Load(const std::filesystem::path& path);
  void Save(const std::filesystem::path& path) const;
  // Random network with the given channel widths, e.g. {3, 8, 16}.
  static FeatureNetDistance Random(const std::vector<int>& widths, Rng& rng);

  double Distance(const Image& a, const Image& b) const override;
  double DistanceAndGrad(const Image& a, const Image& b,
                         Image* d_b) const override;

  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
};

}  // namespace qpress

#endif  // QPRESS_PERCEPTUAL_H_
