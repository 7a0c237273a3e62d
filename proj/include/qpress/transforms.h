#ifndef QPRESS_TRANSFORMS_H_
#define QPRESS_TRANSFORMS_H_

#include <string>
#include <vector>

#include "qpress/attention.h"
#include "qpress/image.h"
#include "qpress/tensor.h"

namespace qpress {

// Architecture hyperparameters shared by encoder, decoder and prior.
struct ModelConfig {
  int tile_size = 256;
  int patch_size = 16;
  int num_queries = 64;
  int dim = 768;
  int depth = 12;
  int heads = 12;
  int ffw_multiplier = 4;
  NormPlacement norm = NormPlacement::kPre;
  double attention_scale = 0.0;  // <= 0: 1/sqrt(d_h)
  double init_stddev = 0.02;     // queries, prototypes, positions
  // Factorized prior: hidden widths of the per-channel CDF network.
  std::vector<int> prior_filters = {3, 3, 3};
  double prior_init_scale = 10.0;
  double likelihood_floor = 1e-9;
  uint64_t seed = 0;

  int patches_per_side() const { return tile_size / patch_size; }
  int patches_per_tile() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  // Token width differs from the flattened patch width only in reduced
  // configurations; a learned projection bridges the two.
  bool uses_patch_projection() const { return dim != patch_dim(); }
  BlockConfig block_config() const;

  void Validate() const;
  // Canonical "key=value" lines; hashed into the model digest.
  std::string Canonical() const;

  // The full-size architecture: 256² tiles of 16² patches, 64 queries of
  // width 768, 12 heads, depth 12.
  static ModelConfig Full();
  // Reduced architecture for desk-scale experiments.
  static ModelConfig Toy();
};

// Encoder output queries. Quantized latents hold exact integers.
struct LatentCode {
  Matrix values;  // N × d, query-major
  bool quantized = false;
};

// Analysis transform: learned image queries aggregate the patch tokens of
// one tile through a stack of decoder blocks.
class Encoder {
 public:
  struct Cache {
    Matrix tokens;   // patchified tile
    Matrix context;  // embedded tokens + positions
    std::vector<DecoderBlock::Cache> blocks;
  };

  Encoder() = default;
  explicit Encoder(const ModelConfig& config);

  void Init(Rng& rng);
  Matrix Forward(const Image& tile, Cache* cache,
                 std::vector<AttentionRecord>* capture = nullptr) const;
  // Accumulates parameter gradients from d(latent).
  void Backward(const Cache& cache, const Matrix& d_latent);
  void VisitParams(const ParamVisitor& visit);
  const ModelConfig& config() const { return config_; }

  Param image_queries;  // N × d
  Param positions;      // patches × d
  Linear patch_embedding;  // only when the config needs a projection
  std::vector<DecoderBlock> blocks;

 private:
  ModelConfig config_;
};

// Synthesis transform: learned patch prototypes aggregate the latent
// queries; the final prototypes are reshaped into pixels.
class Decoder {
 public:
  struct Cache {
    Matrix context;
    std::vector<DecoderBlock::Cache> blocks;
    Matrix final_queries;
  };

  Decoder() = default;
  explicit Decoder(const ModelConfig& config);

  void Init(Rng& rng);
  // Raw synthesized patch tokens (patches × patch_dim), before clamping.
  Matrix Forward(const Matrix& latent, Cache* cache,
                 std::vector<AttentionRecord>* capture = nullptr) const;
  // Returns d(latent); accumulates parameter gradients.
  Matrix Backward(const Cache& cache, const Matrix& d_patches);
  void VisitParams(const ParamVisitor& visit);
  const ModelConfig& config() const { return config_; }

  Param patch_prototypes;  // patches × d
  Linear patch_output;     // only when the config needs a projection
  std::vector<DecoderBlock> blocks;

 private:
  ModelConfig config_;
};

struct EncodeResult {
  LatentCode latent;
  std::vector<AttentionRecord> records;
};

struct DecodeResult {
  Image image;
  std::vector<AttentionRecord> records;
};

EncodeResult Encode(const Image& tile, const Encoder& encoder,
                    bool capture = false);
DecodeResult Decode(const LatentCode& latent, const Decoder& decoder,
                    bool capture = false);
// Decodes with latent row drop_index removed from the context of every
// layer.
Image DecodeAblated(const LatentCode& latent, int drop_index,
                    const Decoder& decoder);

}  // namespace qpress

#endif  // QPRESS_TRANSFORMS_H_
