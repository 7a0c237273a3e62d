#include "qpress/transforms.h"

#include <sstream>

#include "qpress/errors.h"
#include "qpress/patch_codec.h"

namespace qpress {

BlockConfig ModelConfig::block_config() const {
  BlockConfig b;
  b.dim = dim;
  b.heads = heads;
  b.ffw_hidden = ffw_multiplier * dim;
  b.norm = norm;
  b.attention_scale = attention_scale;
  return b;
}

void ModelConfig::Validate() const {
  if (!IsSupportedPatchSize(patch_size)) {
    throw ConfigError("patch size must be one of 8, 16, 32");
  }
  if (tile_size <= 0 || tile_size % patch_size != 0) {
    throw ConfigError("tile size must be a positive multiple of the patch size");
  }
  if (num_queries < 1) throw ConfigError("need at least one image query");
  if (depth < 1) throw ConfigError("depth must be at least 1");
  if (ffw_multiplier < 1) throw ConfigError("ffw multiplier must be >= 1");
  if (init_stddev < 0.0) throw ConfigError("init stddev must be >= 0");
  if (prior_filters.empty()) throw ConfigError("prior needs at least one hidden stage");
  for (int f : prior_filters) {
    if (f < 1) throw ConfigError("prior filter widths must be positive");
  }
  if (prior_init_scale <= 0.0) throw ConfigError("prior init scale must be > 0");
  if (likelihood_floor <= 0.0 || likelihood_floor >= 1.0) {
    throw ConfigError("likelihood floor must be in (0, 1)");
  }
  block_config().Validate();
}

std::string ModelConfig::Canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "tile_size=" << tile_size << "\n"
     << "patch_size=" << patch_size << "\n"
     << "num_queries=" << num_queries << "\n"
     << "dim=" << dim << "\n"
     << "depth=" << depth << "\n"
     << "heads=" << heads << "\n"
     << "ffw_multiplier=" << ffw_multiplier << "\n"
     << "norm=" << ToString(norm) << "\n"
     << "attention_scale=" << attention_scale << "\n"
     << "init_stddev=" << init_stddev << "\n"
     << "prior_filters=";
  for (size_t i = 0; i < prior_filters.size(); ++i) {
    os << (i ? "," : "") << prior_filters[i];
  }
  os << "\n"
     << "prior_init_scale=" << prior_init_scale << "\n"
     << "likelihood_floor=" << likelihood_floor << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::Full() { return ModelConfig{}; }

ModelConfig ModelConfig::Toy() {
  ModelConfig c;
  c.num_queries = 4;
  c.dim = 32;
  c.depth = 2;
  c.heads = 2;
  return c;
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const ModelConfig& config) : config_(config) {
  config.Validate();
  image_queries = Param(Matrix::Zero(config.num_queries, config.dim));
  positions = Param(Matrix::Zero(config.patches_per_tile(), config.dim));
  if (config.uses_patch_projection()) {
    patch_embedding = Linear(config.patch_dim(), config.dim);
  }
  blocks.assign(config.depth, DecoderBlock(config.block_config()));
}

void Encoder::Init(Rng& rng) {
  const double s = config_.init_stddev;
  image_queries.value = GaussianMatrix(config_.num_queries, config_.dim, s, rng);
  positions.value = GaussianMatrix(config_.patches_per_tile(), config_.dim, s, rng);
  if (config_.uses_patch_projection()) patch_embedding.InitXavier(rng);
  for (auto& b : blocks) b.Init(rng);
}

Matrix Encoder::Forward(const Image& tile, Cache* cache,
                        std::vector<AttentionRecord>* capture) const {
  if (tile.height() != config_.tile_size || tile.width() != config_.tile_size) {
    throw ShapeError("encoder expects a " + std::to_string(config_.tile_size) +
                     "x" + std::to_string(config_.tile_size) + " tile, got " +
                     std::to_string(tile.height()) + "x" +
                     std::to_string(tile.width()));
  }
  Matrix tokens = Patchify(tile, config_.patch_size);
  Matrix embedded = config_.uses_patch_projection()
                        ? patch_embedding.Forward(tokens)
                        : tokens;
  Matrix context = AddPositionalEncoding(embedded, positions.value);
  Matrix q = image_queries.value;
  if (cache != nullptr) cache->blocks.resize(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) {
    q = blocks[i].Forward(q, context,
                          cache != nullptr ? &cache->blocks[i] : nullptr,
                          capture, static_cast<int>(i));
  }
  if (cache != nullptr) {
    cache->tokens = std::move(tokens);
    cache->context = std::move(context);
  }
  return q;
}

void Encoder::Backward(const Cache& cache, const Matrix& d_latent) {
  Matrix d_context = Matrix::Zero(cache.context.rows(), cache.context.cols());
  Matrix d_q = d_latent;
  for (size_t i = blocks.size(); i-- > 0;) {
    Matrix d_prev;
    blocks[i].Backward(cache.blocks[i], d_q, &d_prev, &d_context);
    d_q = std::move(d_prev);
  }
  image_queries.grad += d_q;
  positions.grad += d_context;
  if (config_.uses_patch_projection()) {
    patch_embedding.weight.grad.noalias() += cache.tokens.transpose() * d_context;
    patch_embedding.bias.grad.row(0) += d_context.colwise().sum();
  }
}

void Encoder::VisitParams(const ParamVisitor& visit) {
  visit("encoder.image_queries", image_queries);
  visit("encoder.positions", positions);
  if (config_.uses_patch_projection()) {
    patch_embedding.VisitParams("encoder.patch_embedding", visit);
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].VisitParams("encoder.block" + std::to_string(i), visit);
  }
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const ModelConfig& config) : config_(config) {
  config.Validate();
  patch_prototypes = Param(Matrix::Zero(config.patches_per_tile(), config.dim));
  if (config.uses_patch_projection()) {
    patch_output = Linear(config.dim, config.patch_dim());
  }
  blocks.assign(config.depth, DecoderBlock(config.block_config()));
}

void Decoder::Init(Rng& rng) {
  patch_prototypes.value = GaussianMatrix(
      config_.patches_per_tile(), config_.dim, config_.init_stddev, rng);
  if (config_.uses_patch_projection()) {
    patch_output.InitXavier(rng);
    // Start from mid-gray.
    patch_output.bias.value.setConstant(0.5);
  }
  for (auto& b : blocks) b.Init(rng);
}

Matrix Decoder::Forward(const Matrix& latent, Cache* cache,
                        std::vector<AttentionRecord>* capture) const {
  if (latent.cols() != config_.dim) {
    throw ShapeError("latent width " + std::to_string(latent.cols()) +
                     " != model width " + std::to_string(config_.dim));
  }
  if (latent.rows() == 0) throw ShapeError("decoder: empty latent context");
  Matrix q = patch_prototypes.value;
  if (cache != nullptr) cache->blocks.resize(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) {
    q = blocks[i].Forward(q, latent,
                          cache != nullptr ? &cache->blocks[i] : nullptr,
                          capture, static_cast<int>(i));
  }
  Matrix patches =
      config_.uses_patch_projection() ? patch_output.Forward(q) : q;
  if (cache != nullptr) {
    cache->context = latent;
    cache->final_queries = std::move(q);
  }
  return patches;
}

Matrix Decoder::Backward(const Cache& cache, const Matrix& d_patches) {
  Matrix d_q = config_.uses_patch_projection()
                   ? patch_output.Backward(cache.final_queries, d_patches)
                   : d_patches;
  Matrix d_latent = Matrix::Zero(cache.context.rows(), cache.context.cols());
  for (size_t i = blocks.size(); i-- > 0;) {
    Matrix d_prev;
    blocks[i].Backward(cache.blocks[i], d_q, &d_prev, &d_latent);
    d_q = std::move(d_prev);
  }
  patch_prototypes.grad += d_q;
  return d_latent;
}

void Decoder::VisitParams(const ParamVisitor& visit) {
  visit("decoder.patch_prototypes", patch_prototypes);
  if (config_.uses_patch_projection()) {
    patch_output.VisitParams("decoder.patch_output", visit);
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].VisitParams("decoder.block" + std::to_string(i), visit);
  }
}

// ------------------------------------------------------------- Free API

EncodeResult Encode(const Image& tile, const Encoder& encoder, bool capture) {
  EncodeResult r;
  r.latent.values =
      encoder.Forward(tile, nullptr, capture ? &r.records : nullptr);
  r.latent.quantized = false;
  return r;
}

DecodeResult Decode(const LatentCode& latent, const Decoder& decoder,
                    bool capture) {
  DecodeResult r;
  const Matrix patches =
      decoder.Forward(latent.values, nullptr, capture ? &r.records : nullptr);
  r.image = Unpatchify(patches, decoder.config().patch_size);
  return r;
}

Image DecodeAblated(const LatentCode& latent, int drop_index,
                    const Decoder& decoder) {
  const Eigen::Index n = latent.values.rows();
  if (drop_index < 0 || drop_index >= n) {
    throw InputError("ablation index " + std::to_string(drop_index) +
                     " outside [0, " + std::to_string(n) + ")");
  }
  if (n == 1) {
    throw InputError("cannot ablate the only latent query: empty context");
  }
  LatentCode reduced;
  reduced.quantized = latent.quantized;
  reduced.values.resize(n - 1, latent.values.cols());
  reduced.values.topRows(drop_index) = latent.values.topRows(drop_index);
  reduced.values.bottomRows(n - 1 - drop_index) =
      latent.values.bottomRows(n - 1 - drop_index);
  return Decode(reduced, decoder).image;
}

}  // namespace qpress
