#ifndef QPRESS_TRAINING_H_
#define QPRESS_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qpress/config.h"
#include "qpress/image.h"
#include "qpress/model.h"
#include "qpress/perceptual.h"

namespace qpress {

struct RdTerms {
  double loss = 0.0;
  double rate_bits = 0.0;
  double rate_bpp = 0.0;
  double distortion = 0.0;
};

// Rate-distortion objective on one tile with noise-quantized latents:
//   loss = rate_bits / pixels + λ · D(I, Î)
// where Î is the unclamped synthesis output. D is 255²·MSE, or the
// perceptual metric on both images resized to the configured side.
class RdLoss {
 public:
  explicit RdLoss(RDLossConfig config,
                  std::shared_ptr<const PerceptualMetric> metric = nullptr);

  const RDLossConfig& config() const { return config_; }

  // Draws the quantization noise from rng.
  RdTerms Compute(Model& model, const Image& tile, Rng& rng, bool backward,
                  double weight = 1.0) const;
  // With explicit noise (N × d, entries in [−1/2, 1/2)). When backward is
  // set, weight·∂loss/∂θ is added to every parameter gradient.
  RdTerms ComputeWithNoise(Model& model, const Image& tile, const Matrix& noise,
                           bool backward, double weight = 1.0) const;

  // Distortion and, when grad is non-null, ∂D/∂reconstruction.
  double Distortion(const Image& original, const Image& reconstruction,
                    Image* grad) const;

 private:
  RDLossConfig config_;
  std::shared_ptr<const PerceptualMetric> metric_;
};

// Loads the perceptual backend named by the loss config, or null for MSE.
std::shared_ptr<const PerceptualMetric> LoadPerceptualMetric(
    const RDLossConfig& config);

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}

  // One update from the accumulated gradients; increments step().
  void Step(Model& model);

  int64_t step() const { return step_; }
  void ExportState(TrainingState* state) const;
  void ImportState(const TrainingState& state);

 private:
  TrainConfig config_;
  int64_t step_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

// Images of at least min_side pixels on both axes found under dir.
// Smaller images are skipped with a warning on stderr.
std::vector<Image> LoadDataset(const std::filesystem::path& dir, int min_side);

class Trainer {
 public:
  // dataset must be nonempty; resume restores optimizer and RNG state.
  Trainer(AppConfig config, std::vector<Image> dataset, Model model,
          std::shared_ptr<const PerceptualMetric> metric = nullptr,
          const std::optional<TrainingState>& resume = std::nullopt);

  // One optimizer step; returns the batch-mean terms measured before the
  // update. Throws NumericError on a non-finite loss.
  RdTerms Step();

  // The random 256² crop (with optional flip) the next Step would draw.
  Image SampleCrop(Rng& rng) const;

  int64_t step() const { return adam_.step(); }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  Rng& rng() { return rng_; }
  TrainingState State() const;

 private:
  AppConfig config_;
  std::vector<Image> dataset_;
  Model model_;
  RdLoss loss_;
  Adam adam_;
  Rng rng_;
};

struct TrainOptions {
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> resume;  // checkpoint with state
  // Called after every logged step.
  std::function<void(int64_t step, const RdTerms&)> on_log;
};

// Full training run: writes step_<n>.qpck every checkpoint_every steps,
// final.qpck at the end and metrics.csv (step,loss,rate_bpp,distortion).
Model Train(const AppConfig& config, const TrainOptions& options);

struct ImageMetrics {
  std::string name;
  int height = 0;
  int width = 0;
  int tiles = 0;
  double psnr = 0.0;
  // Unset when the cropped image is below the MS-SSIM minimum side.
  std::optional<double> ms_ssim;
  std::optional<double> perceptual;
  double file_bpp = 0.0;
  double payload_bpp = 0.0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  std::vector<std::string> skipped;

  // Arithmetic means over images.
  ImageMetrics Mean() const;
  std::string ToCsv() const;
  std::string ToText() const;
};

ImageMetrics EvaluateImage(const std::string& name, const Image& image,
                           const Model& model, const CodecConfig& codec = {},
                           const PerceptualMetric* metric = nullptr);

// Per image: tile → compress → serialize → parse → decompress → metrics on
// the cropped region.
MetricReport Evaluate(const std::filesystem::path& dataset_dir,
                      const Model& model, const CodecConfig& codec = {},
                      const PerceptualMetric* metric = nullptr);

}  // namespace qpress

#endif  // QPRESS_TRAINING_H_
