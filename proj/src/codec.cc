#include "qpress/codec.h"

#include <limits>
#include <map>

#include "qpress/errors.h"
#include "qpress/patch_codec.h"
#include "qpress/range_coder.h"

namespace qpress {

namespace {

std::vector<uint16_t> ChannelTableIds(int num_queries, int dim) {
  std::vector<uint16_t> ids;
  ids.reserve(static_cast<size_t>(num_queries) * dim);
  for (int c = 0; c < dim; ++c) {
    for (int q = 0; q < num_queries; ++q) ids.push_back(static_cast<uint16_t>(c));
  }
  return ids;
}

LatentCode RoundedLatent(const Image& tile, const Model& model) {
  Rng unused(0);
  return Quantize(Encode(tile, model.encoder).latent, QuantizerMode::kRound, unused);
}

}  // namespace

std::vector<int32_t> LatentToSymbols(const LatentCode& latent) {
  if (!latent.quantized) throw InputError("only quantized latents can be coded");
  const Matrix& v = latent.values;
  std::vector<int32_t> symbols;
  symbols.reserve(v.size());
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    for (Eigen::Index q = 0; q < v.rows(); ++q) {
      symbols.push_back(static_cast<int32_t>(v(q, c)));
    }
  }
  return symbols;
}

LatentCode SymbolsToLatent(const std::vector<int32_t>& symbols, int num_queries,
                           int dim) {
  if (symbols.size() != static_cast<size_t>(num_queries) * dim) {
    throw ShapeError("symbol count does not match the latent shape");
  }
  LatentCode latent;
  latent.quantized = true;
  latent.values.resize(num_queries, dim);
  size_t i = 0;
  for (int c = 0; c < dim; ++c) {
    for (int q = 0; q < num_queries; ++q) latent.values(q, c) = symbols[i++];
  }
  return latent;
}

Bitstream CompressImage(const Image& image, const Model& model,
                        const CompressOptions& options) {
  const ModelConfig& config = model.config();
  const TiledImage tiled = TileImage(image, config.tile_size);
  Bitstream s;
  s.flags = options.side_info_tables ? kFlagSideInfoTables : 0;
  s.height = static_cast<uint32_t>(image.height());
  s.width = static_cast<uint32_t>(image.width());
  s.tile_size = static_cast<uint16_t>(config.tile_size);
  s.tile_rows = static_cast<uint16_t>(tiled.grid.rows);
  s.tile_cols = static_cast<uint16_t>(tiled.grid.cols);
  s.crop_y = static_cast<uint32_t>(tiled.grid.crop_y);
  s.crop_x = static_cast<uint32_t>(tiled.grid.crop_x);
  s.num_queries = static_cast<uint16_t>(config.num_queries);
  s.dim = static_cast<uint16_t>(config.dim);
  s.model_digest = model.Digest();

  const auto ids = ChannelTableIds(config.num_queries, config.dim);
  for (const Image& tile : tiled.tiles) {
    const LatentCode latent = RoundedLatent(tile, model);
    const Support support = LatentSupport(latent);
    if (support.lo < std::numeric_limits<int16_t>::min() ||
        support.hi > std::numeric_limits<int16_t>::max()) {
      throw CodingError("latent values exceed the 16-bit support range");
    }
    CdfTables tables = BuildCdfTables(model.prior, support.lo, support.hi);
    TileEntry entry;
    entry.lo = static_cast<int16_t>(support.lo);
    entry.hi = static_cast<int16_t>(support.hi);
    entry.payload = RangeEncode(LatentToSymbols(latent), tables.channels, ids);
    if (options.side_info_tables) entry.tables = std::move(tables);
    s.tiles.push_back(std::move(entry));
  }
  return s;
}

Image DecompressImage(const Bitstream& stream, const Model& model) {
  const ModelConfig& config = model.config();
  if (stream.model_digest != model.Digest()) {
    throw DigestMismatchError("bitstream was written by a different model");
  }
  if (stream.num_queries != config.num_queries || stream.dim != config.dim ||
      stream.tile_size != config.tile_size) {
    throw FormatError("bitstream latent shape does not match the model");
  }
  TileGrid grid;
  grid.tile_size = stream.tile_size;
  grid.rows = stream.tile_rows;
  grid.cols = stream.tile_cols;
  grid.crop_y = static_cast<int>(stream.crop_y);
  grid.crop_x = static_cast<int>(stream.crop_x);
  if (stream.tiles.size() != static_cast<size_t>(grid.tile_count())) {
    throw FormatError("tile entry count does not match the tile grid");
  }

  const auto ids = ChannelTableIds(config.num_queries, config.dim);
  std::map<std::pair<int, int>, CdfTables> derived;
  std::vector<Image> tiles;
  tiles.reserve(stream.tiles.size());
  for (const TileEntry& entry : stream.tiles) {
    const CdfTables* tables = nullptr;
    if (entry.tables) {
      tables = &*entry.tables;
    } else {
      const auto key = std::make_pair(int{entry.lo}, int{entry.hi});
      auto it = derived.find(key);
      if (it == derived.end()) {
        it = derived.emplace(key, BuildCdfTables(model.prior, entry.lo, entry.hi))
                 .first;
      }
      tables = &it->second;
    }
    const auto symbols = RangeDecode(entry.payload, tables->channels, ids);
    const LatentCode latent =
        SymbolsToLatent(symbols, config.num_queries, config.dim);
    tiles.push_back(Decode(latent, model.decoder).image);
  }
  return ReassembleTiles(grid, tiles);
}

Image ReconstructInProcess(const Image& image, const Model& model) {
  const TiledImage tiled = TileImage(image, model.config().tile_size);
  std::vector<Image> tiles;
  tiles.reserve(tiled.tiles.size());
  for (const Image& tile : tiled.tiles) {
    tiles.push_back(Decode(RoundedLatent(tile, model), model.decoder).image);
  }
  return ReassembleTiles(tiled.grid, tiles);
}

RateReport ComputeRate(const Bitstream& stream) {
  RateReport r;
  r.file_bytes = SerializeBitstream(stream).size();
  r.payload_bytes = stream.PayloadBytes();
  r.pixels = static_cast<int64_t>(stream.tile_rows) * stream.tile_cols *
             stream.tile_size * stream.tile_size;
  if (r.pixels > 0) {
    r.file_bpp = 8.0 * static_cast<double>(r.file_bytes) / static_cast<double>(r.pixels);
    r.payload_bpp =
        8.0 * static_cast<double>(r.payload_bytes) / static_cast<double>(r.pixels);
  }
  return r;
}

}  // namespace qpress
