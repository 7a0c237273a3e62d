#ifndef QPRESS_BITSTREAM_H_
#define QPRESS_BITSTREAM_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "qpress/entropy_model.h"

namespace qpress {

// .qpf container. All integers little-endian.
//
//   offset size  field
//   0      4     magic "QPF1"
//   4      2     version (1)
//   6      2     flags (bit 0: per-tile CDF tables follow each tile entry)
//   8      4     image height (original, before cropping)
//   12     4     image width
//   16     2     tile size
//   18     2     tile rows
//   20     2     tile cols
//   22     4     crop offset y
//   26     4     crop offset x
//   30     2     latent queries N
//   32     2     latent width d
//   34     8     model digest
//   42     ...   tile entries, raster order:
//                  int16 support lo, int16 support hi, uint32 payload bytes
//                  [flag bit 0: d tables × (hi − lo + 2) uint16 CDF entries,
//                   the final 2^16 entry stored as 0]
//   ...    ...   payloads, concatenated in tile order
//
// Symbols within a payload are channel-major: for c in [0, d), for q in
// [0, N): latent(q, c).
constexpr char kBitstreamMagic[4] = {'Q', 'P', 'F', '1'};
constexpr uint16_t kBitstreamVersion = 1;
constexpr uint16_t kFlagSideInfoTables = 1;
constexpr size_t kBitstreamHeaderBytes = 42;

struct TileEntry {
  int16_t lo = 0;
  int16_t hi = 0;
  std::vector<uint8_t> payload;
  // Present only when the side-info flag is set.
  std::optional<CdfTables> tables;

  bool operator==(const TileEntry& o) const {
    return lo == o.lo && hi == o.hi && payload == o.payload &&
           tables.has_value() == o.tables.has_value() &&
           (!tables || tables->channels == o.tables->channels);
  }
};

struct Bitstream {
  uint16_t version = kBitstreamVersion;
  uint16_t flags = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  uint16_t tile_size = 256;
  uint16_t tile_rows = 0;
  uint16_t tile_cols = 0;
  uint32_t crop_y = 0;
  uint32_t crop_x = 0;
  uint16_t num_queries = 0;
  uint16_t dim = 0;
  uint64_t model_digest = 0;
  std::vector<TileEntry> tiles;

  bool operator==(const Bitstream&) const = default;

  size_t PayloadBytes() const;
};

std::vector<uint8_t> SerializeBitstream(const Bitstream& stream);
// Throws FormatError on malformed input (bad magic, unsupported version,
// inconsistent lengths).
Bitstream ParseBitstream(std::span<const uint8_t> bytes);

void WriteFile(const std::filesystem::path& path, std::span<const uint8_t> bytes);
std::vector<uint8_t> ReadFile(const std::filesystem::path& path);

}  // namespace qpress

#endif  // QPRESS_BITSTREAM_H_
