#ifndef QPRESS_MODEL_H_
#define QPRESS_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "qpress/entropy_model.h"
#include "qpress/transforms.h"

namespace qpress {

// Analysis transform, synthesis transform and prior of one codec.
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config);

  // Random initialization from config().seed.
  void Init();

  const ModelConfig& config() const { return config_; }

  void VisitParams(const ParamVisitor& visit);
  void ZeroGrad();
  size_t ParameterCount() const;

  // FNV-1a over the canonical config and every parameter tensor. Two models
  // decode each other's bitstreams only if their digests agree.
  uint64_t Digest() const;

  Encoder encoder;
  Decoder decoder;
  FactorizedPrior prior;

 private:
  ModelConfig config_;
};

// Adam moments and bookkeeping needed to resume training bit-exactly.
struct TrainingState {
  int64_t step = 0;
  std::string rng_state;
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
};

struct Checkpoint {
  Model model;
  std::optional<TrainingState> training;
};

// Binary archive "QPCK": canonical config text, digest, then every
// parameter tensor keyed by its module path (little-endian float64), and an
// optional training-state section.
void SaveCheckpoint(const std::filesystem::path& path, const Model& model,
                    const TrainingState* training = nullptr);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Parses the canonical "key=value" lines written by ModelConfig::Canonical.
ModelConfig ParseCanonicalConfig(const std::string& text);

}  // namespace qpress

#endif  // QPRESS_MODEL_H_
