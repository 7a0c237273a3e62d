#include "qpress/codec.h"

#include <fstream>

#include <gtest/gtest.h>

#include "qpress/errors.h"
#include "qpress/patch_codec.h"
#include "test_util.h"

namespace qpress {
namespace {

using testing::RandomImage;
using testing::SyntheticImage;
using testing::TempDir;

Model ToyModel(uint64_t seed = 0) {
  ModelConfig c = ModelConfig::Toy();
  c.seed = seed;
  Model m(c);
  m.Init();
  return m;
}

TEST(SymbolOrderTest, ChannelMajorThenQuery) {
  LatentCode latent;
  latent.quantized = true;
  latent.values.resize(2, 3);
  latent.values << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(LatentToSymbols(latent), (std::vector<int32_t>{1, 4, 2, 5, 3, 6}));
  const LatentCode back = SymbolsToLatent(LatentToSymbols(latent), 2, 3);
  EXPECT_EQ(back.values, latent.values);
  EXPECT_TRUE(back.quantized);
  EXPECT_THROW(SymbolsToLatent({1, 2, 3}, 2, 3), ShapeError);
  latent.quantized = false;
  EXPECT_THROW(LatentToSymbols(latent), InputError);
}

TEST(CodecTest, DecompressionMatchesInProcessReconstructionBitwise) {
  const Model model = ToyModel();
  Rng rng(1);
  for (int i = 0; i < 3; ++i) {
    const Image img = i == 0 ? SyntheticImage(256, 256) : RandomImage(256, 256, rng);
    const Bitstream stream = CompressImage(img, model);
    const Bitstream parsed = ParseBitstream(SerializeBitstream(stream));
    EXPECT_EQ(DecompressImage(parsed, model), ReconstructInProcess(img, model));
  }
}

TEST(CodecTest, MultiTileImagesUseTheCenteredGrid) {
  const Model model = ToyModel();
  const Image img = SyntheticImage(300, 530, 0.3);
  const Bitstream stream = CompressImage(img, model);
  EXPECT_EQ(stream.tile_rows, 1);
  EXPECT_EQ(stream.tile_cols, 2);
  EXPECT_EQ(stream.crop_y, 22u);
  EXPECT_EQ(stream.crop_x, 9u);
  EXPECT_EQ(stream.tiles.size(), 2u);
  const Image rec = DecompressImage(stream, model);
  EXPECT_EQ(rec.height(), 256);
  EXPECT_EQ(rec.width(), 512);
  EXPECT_EQ(rec, ReconstructInProcess(img, model));
}

TEST(CodecTest, SideInformationModeDecodesIdentically) {
  const Model model = ToyModel();
  const Image img = SyntheticImage(256, 256, 0.7);
  CompressOptions opts;
  opts.side_info_tables = true;
  const Bitstream with = CompressImage(img, model, opts);
  const Bitstream without = CompressImage(img, model);
  EXPECT_TRUE(with.tiles[0].tables.has_value());
  EXPECT_EQ(with.tiles[0].payload, without.tiles[0].payload);
  const Bitstream parsed = ParseBitstream(SerializeBitstream(with));
  EXPECT_EQ(DecompressImage(parsed, model), DecompressImage(without, model));
}

TEST(CodecTest, RejectsForeignModelsAndSmallImages) {
  const Model model = ToyModel(0);
  const Model other = ToyModel(1);
  const Bitstream stream = CompressImage(SyntheticImage(256, 256), model);
  EXPECT_THROW(DecompressImage(stream, other), DigestMismatchError);
  EXPECT_THROW(CompressImage(SyntheticImage(200, 400), model), InputError);
  Bitstream truncated = stream;
  truncated.tiles[0].payload.pop_back();
  EXPECT_THROW(DecompressImage(truncated, model), CodingError);
}

TEST(CodecTest, BitsPerPixelIsFileBitsOverCroppedPixels) {
  const Model model = ToyModel();
  const Bitstream stream = CompressImage(SyntheticImage(300, 530), model);
  const RateReport r = ComputeRate(stream);
  EXPECT_EQ(r.pixels, 256 * 512);
  EXPECT_EQ(r.file_bytes, SerializeBitstream(stream).size());
  EXPECT_EQ(r.file_bpp, 8.0 * r.file_bytes / (256.0 * 512.0));
  EXPECT_EQ(r.payload_bpp, 8.0 * stream.PayloadBytes() / (256.0 * 512.0));
}

TEST(CheckpointTest, SaveLoadPreservesModelAndTrainingState) {
  TempDir dir("ckpt");
  const Model model = ToyModel(3);
  TrainingState state;
  state.step = 17;
  Rng rng(9);
  rng.Uniform();
  state.rng_state = rng.Serialize();
  state.first_moment["encoder.image_queries"] = Matrix::Constant(4, 32, 0.5);
  state.second_moment["encoder.image_queries"] = Matrix::Constant(4, 32, 0.25);
  SaveCheckpoint(dir.path() / "m.qpck", model, &state);
  const Checkpoint ckpt = LoadCheckpoint(dir.path() / "m.qpck");
  EXPECT_EQ(ckpt.model.Digest(), model.Digest());
  EXPECT_EQ(ckpt.model.config().Canonical(), model.config().Canonical());
  ASSERT_TRUE(ckpt.training.has_value());
  EXPECT_EQ(ckpt.training->step, 17);
  EXPECT_EQ(ckpt.training->first_moment, state.first_moment);
  EXPECT_EQ(ckpt.training->second_moment, state.second_moment);
  Rng restored;
  restored.Deserialize(ckpt.training->rng_state);
  EXPECT_EQ(restored.NextU64(), rng.NextU64());

  const Image img = SyntheticImage(256, 256);
  EXPECT_EQ(ReconstructInProcess(img, ckpt.model), ReconstructInProcess(img, model));

  SaveCheckpoint(dir.path() / "plain.qpck", model);
  EXPECT_FALSE(LoadCheckpoint(dir.path() / "plain.qpck").training.has_value());
}

TEST(CheckpointTest, CorruptFilesAreRejected) {
  TempDir dir("ckpt_bad");
  const Model model = ToyModel();
  const auto path = dir.path() / "m.qpck";
  SaveCheckpoint(path, model);
  auto bytes = ReadFile(path);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;  // inside a tensor
  WriteFile(dir.path() / "flipped.qpck", flipped);
  EXPECT_THROW(LoadCheckpoint(dir.path() / "flipped.qpck"), FormatError);
  WriteFile(dir.path() / "short.qpck", std::span(bytes).first(bytes.size() / 3));
  EXPECT_THROW(LoadCheckpoint(dir.path() / "short.qpck"), FormatError);
  WriteFile(dir.path() / "junk.qpck", std::vector<uint8_t>{'n', 'o', 'p', 'e'});
  EXPECT_THROW(LoadCheckpoint(dir.path() / "junk.qpck"), FormatError);
  EXPECT_THROW(LoadCheckpoint(dir.path() / "absent.qpck"), IoError);
}

TEST(CheckpointTest, CanonicalConfigRoundTrips) {
  ModelConfig c = ModelConfig::Toy();
  c.attention_scale = 0.123456789012345;
  c.norm = NormPlacement::kPost;
  c.prior_filters = {4, 2};
  c.seed = 42;
  EXPECT_EQ(ParseCanonicalConfig(c.Canonical()).Canonical(), c.Canonical());
}

}  // namespace
}  // namespace qpress
