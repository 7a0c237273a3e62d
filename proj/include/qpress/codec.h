#ifndef QPRESS_CODEC_H_
#define QPRESS_CODEC_H_

#include <cstdint>
#include <vector>

#include "qpress/bitstream.h"
#include "qpress/image.h"
#include "qpress/model.h"

namespace qpress {

// Flattens a quantized N × d latent into coding order: channel-major, then
// query index.
std::vector<int32_t> LatentToSymbols(const LatentCode& latent);
LatentCode SymbolsToLatent(const std::vector<int32_t>& symbols, int num_queries,
                           int dim);

struct CompressOptions {
  // Transmit the per-tile CDF tables instead of rebuilding them from the
  // checkpoint on the decoder side.
  bool side_info_tables = false;
};

// Tiles the center crop of the image, encodes each tile, rounds the latent
// and range-codes it under the prior's tables. Throws InputError for images
// smaller than one tile.
Bitstream CompressImage(const Image& image, const Model& model,
                        const CompressOptions& options = {});

// Reconstruction of the cropped region. Throws DigestMismatchError when the
// stream was produced by a different model.
Image DecompressImage(const Bitstream& stream, const Model& model);

// decode(round(encode(tile))) per tile, reassembled; no entropy coding.
Image ReconstructInProcess(const Image& image, const Model& model);

struct RateReport {
  size_t file_bytes = 0;
  size_t payload_bytes = 0;
  int64_t pixels = 0;  // cropped region
  double file_bpp = 0.0;
  double payload_bpp = 0.0;
};

RateReport ComputeRate(const Bitstream& stream);

}  // namespace qpress

#endif  // QPRESS_CODEC_H_
