#include "qpress/transforms.h"

#include <set>

#include <gtest/gtest.h>

#include "qpress/errors.h"
#include "qpress/model.h"
#include "qpress/patch_codec.h"
#include "test_util.h"

namespace qpress {
namespace {

using testing::NumericGradient;
using testing::RandomImage;
using testing::RelativeError;
using testing::TinyConfig;

TEST(ModelConfigTest, ProfilesHaveTheDocumentedShapes) {
  const ModelConfig full = ModelConfig::Full();
  EXPECT_EQ(full.tile_size, 256);
  EXPECT_EQ(full.patch_size, 16);
  EXPECT_EQ(full.num_queries, 64);
  EXPECT_EQ(full.dim, 768);
  EXPECT_EQ(full.heads, 12);
  EXPECT_EQ(full.depth, 12);
  EXPECT_EQ(full.patches_per_tile(), 256);
  EXPECT_FALSE(full.uses_patch_projection());

  const ModelConfig toy = ModelConfig::Toy();
  EXPECT_EQ(toy.num_queries, 4);
  EXPECT_EQ(toy.dim, 32);
  EXPECT_EQ(toy.depth, 2);
  EXPECT_EQ(toy.heads, 2);
  EXPECT_TRUE(toy.uses_patch_projection());
}

TEST(ModelConfigTest, ValidationRejectsBadValues) {
  ModelConfig c = ModelConfig::Toy();
  c.patch_size = 12;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = ModelConfig::Toy();
  c.heads = 3;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = ModelConfig::Toy();
  c.num_queries = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(TransformsTest, FullShapes) {
  // Full widths with a single layer keep the test fast.
  ModelConfig c = ModelConfig::Full();
  c.depth = 1;
  Model model(c);
  model.Init();
  Rng rng(1);
  const Image tile = RandomImage(256, 256, rng);
  const EncodeResult enc = Encode(tile, model.encoder, /*capture=*/true);
  EXPECT_EQ(enc.latent.values.rows(), 64);
  EXPECT_EQ(enc.latent.values.cols(), 768);
  ASSERT_EQ(enc.records.size(), 24u);
  for (const auto& r : enc.records) {
    if (r.role == AttentionRole::kCross) {
      EXPECT_EQ(r.weights.rows(), 64);
      EXPECT_EQ(r.weights.cols(), 256);
    }
  }
  const DecodeResult dec = Decode(enc.latent, model.decoder, /*capture=*/true);
  EXPECT_EQ(dec.image.height(), 256);
  EXPECT_EQ(dec.image.width(), 256);
  for (double v : dec.image.data()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
  for (const auto& r : dec.records) {
    if (r.role == AttentionRole::kCross) {
      EXPECT_EQ(r.weights.rows(), 256);
      EXPECT_EQ(r.weights.cols(), 64);
    }
  }
}

TEST(TransformsTest, RejectsWrongTileAndLatentShapes) {
  Model model(ModelConfig::Toy());
  model.Init();
  EXPECT_THROW(Encode(Image(128, 128), model.encoder), ShapeError);
  LatentCode bad;
  bad.values = Matrix::Zero(4, 31);
  EXPECT_THROW(Decode(bad, model.decoder), ShapeError);
}

TEST(TransformsTest, InitializationIsDeterministicInTheSeed) {
  ModelConfig c = ModelConfig::Toy();
  Model a(c), b(c);
  a.Init();
  b.Init();
  EXPECT_EQ(a.Digest(), b.Digest());
  c.seed = 1;
  Model other(c);
  other.Init();
  EXPECT_NE(a.Digest(), other.Digest());
}

TEST(TransformsTest, EncoderBackwardMatchesFiniteDifferences) {
  ModelConfig c = TinyConfig();
  Model model(c);
  model.Init();
  Rng rng(2);
  const Image tile = RandomImage(c.tile_size, c.tile_size, rng);
  const Matrix probe = GaussianMatrix(c.num_queries, c.dim, 1.0, rng);
  auto loss = [&] { return model.encoder.Forward(tile, nullptr).cwiseProduct(probe).sum(); };
  Encoder::Cache cache;
  model.encoder.Forward(tile, &cache);
  model.ZeroGrad();
  model.encoder.Backward(cache, probe);
  model.encoder.VisitParams([&](const std::string& name, Param& p) {
    EXPECT_LT(RelativeError(p.grad, NumericGradient(p.value, loss)), 1e-3) << name;
  });
}

TEST(TransformsTest, DecoderBackwardMatchesFiniteDifferences) {
  ModelConfig c = TinyConfig();
  Model model(c);
  model.Init();
  Rng rng(3);
  Matrix latent = GaussianMatrix(c.num_queries, c.dim, 1.0, rng);
  const Matrix probe = GaussianMatrix(c.patches_per_tile(), c.patch_dim(), 1.0, rng);
  auto loss = [&] { return model.decoder.Forward(latent, nullptr).cwiseProduct(probe).sum(); };
  Decoder::Cache cache;
  model.decoder.Forward(latent, &cache);
  model.ZeroGrad();
  const Matrix d_latent = model.decoder.Backward(cache, probe);
  EXPECT_LT(RelativeError(d_latent, NumericGradient(latent, loss)), 1e-3);
  model.decoder.VisitParams([&](const std::string& name, Param& p) {
    EXPECT_LT(RelativeError(p.grad, NumericGradient(p.value, loss)), 1e-3) << name;
  });
}

TEST(TransformsTest, ZeroWeightDecoderIgnoresTheLatent) {
  ModelConfig c = ModelConfig::Toy();
  Model model(c);  // constructed but not initialized: every weight is zero
  Rng rng(4);
  LatentCode latent;
  latent.values = GaussianMatrix(c.num_queries, c.dim, 3.0, rng);
  const Image full = Decode(latent, model.decoder).image;
  for (int q = 0; q < c.num_queries; ++q) {
    EXPECT_EQ(DecodeAblated(latent, q, model.decoder), full);
  }
}

TEST(TransformsTest, AblationRemovesExactlyOneQuery) {
  ModelConfig c = ModelConfig::Toy();
  Model model(c);
  model.Init();
  Rng rng(5);
  LatentCode latent;
  latent.values = GaussianMatrix(c.num_queries, c.dim, 1.0, rng);
  LatentCode reduced;
  reduced.values.resize(c.num_queries - 1, c.dim);
  reduced.values << latent.values.topRows(1), latent.values.bottomRows(2);
  EXPECT_EQ(DecodeAblated(latent, 1, model.decoder), Decode(reduced, model.decoder).image);
  EXPECT_THROW(DecodeAblated(latent, 4, model.decoder), InputError);
  EXPECT_THROW(DecodeAblated(latent, -1, model.decoder), InputError);
  LatentCode single;
  single.values = latent.values.topRows(1);
  EXPECT_THROW(DecodeAblated(single, 0, model.decoder), InputError);
}

TEST(TransformsTest, ParameterNamesAreUnique) {
  Model model(ModelConfig::Toy());
  std::set<std::string> names;
  size_t count = 0;
  model.VisitParams([&](const std::string& name, Param&) {
    names.insert(name);
    ++count;
  });
  EXPECT_EQ(names.size(), count);
  EXPECT_TRUE(names.count("encoder.image_queries"));
  EXPECT_TRUE(names.count("decoder.patch_prototypes"));
  EXPECT_TRUE(names.count("prior.stage0.matrix"));
}

}  // namespace
}  // namespace qpress
