#ifndef QPRESS_CONFIG_H_
#define QPRESS_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "qpress/transforms.h"

namespace qpress {

enum class Distortion { kMse, kPerceptual };

Distortion ParseDistortion(const std::string& s);
std::string ToString(Distortion d);

struct RDLossConfig {
  Distortion distortion = Distortion::kMse;
  // Rate weight; unset picks the per-distortion default.
  std::optional<double> lambda;
  // Side length both images are bilinearly resized to before the
  // perceptual metric.
  int perceptual_upscale = 512;
  std::filesystem::path perceptual_weights;

  double EffectiveLambda() const;
  void Validate() const;
};

// Defaults tuned for the two distortion profiles at around 0.3 bpp.
constexpr double kDefaultLambdaPerceptual = 130.0;
constexpr double kDefaultLambdaMse = 0.01;
// MSE distortion is measured on the 8-bit value scale.
constexpr double kMseDistortionScale = 255.0 * 255.0;

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t steps = 1000;
  int batch_size = 1;
  int crop = 256;
  bool flip = true;
  uint64_t seed = 0;
  int64_t checkpoint_every = 500;
  int64_t log_every = 1;

  void Validate() const;
};

struct CodecConfig {
  bool side_info_tables = false;
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  RDLossConfig loss;
  CodecConfig codec;
};

// INI file with sections [model], [train], [loss], [codec]. In [model],
// "profile = toy|full" selects the base architecture and later keys
// override it. Unknown sections or keys are errors.
AppConfig LoadAppConfig(const std::filesystem::path& path);
AppConfig ParseAppConfig(const std::string& text);

// Sets one [model] key; throws ConfigError for unknown keys or bad values.
void ApplyModelSetting(ModelConfig& config, const std::string& key,
                       const std::string& value);

}  // namespace qpress

#endif  // QPRESS_CONFIG_H_
