#include "qpress/bitstream.h"

#include <cstring>
#include <fstream>

#include "qpress/errors.h"

namespace qpress {

namespace {

class ByteWriter {
 public:
  template <typename T>
  void Put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<uint8_t>(u & 0xFF));
      u = static_cast<U>(u >> 8);
    }
  }
  void PutBytes(std::span<const uint8_t> b) {
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  std::vector<uint8_t> Take() { return std::move(bytes_); }

 private:
  std::vector<uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T Get() {
    Need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::span<const uint8_t> GetBytes(size_t n) {
    Need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void Need(size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated bitstream");
  }

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

}  // namespace

size_t Bitstream::PayloadBytes() const {
  size_t total = 0;
  for (const auto& t : tiles) total += t.payload.size();
  return total;
}

std::vector<uint8_t> SerializeBitstream(const Bitstream& s) {
  if (s.tiles.size() != static_cast<size_t>(s.tile_rows) * s.tile_cols) {
    throw FormatError("tile entry count does not match the tile grid");
  }
  ByteWriter w;
  for (char c : kBitstreamMagic) w.Put<uint8_t>(static_cast<uint8_t>(c));
  w.Put<uint16_t>(s.version);
  w.Put<uint16_t>(s.flags);
  w.Put<uint32_t>(s.height);
  w.Put<uint32_t>(s.width);
  w.Put<uint16_t>(s.tile_size);
  w.Put<uint16_t>(s.tile_rows);
  w.Put<uint16_t>(s.tile_cols);
  w.Put<uint32_t>(s.crop_y);
  w.Put<uint32_t>(s.crop_x);
  w.Put<uint16_t>(s.num_queries);
  w.Put<uint16_t>(s.dim);
  w.Put<uint64_t>(s.model_digest);
  const bool side_info = (s.flags & kFlagSideInfoTables) != 0;
  for (const auto& t : s.tiles) {
    w.Put<int16_t>(t.lo);
    w.Put<int16_t>(t.hi);
    w.Put<uint32_t>(static_cast<uint32_t>(t.payload.size()));
    if (side_info) {
      if (!t.tables || t.tables->channels.size() != s.dim) {
        throw FormatError("side-info flag set but tile tables missing");
      }
      for (const auto& cdf : t.tables->channels) {
        if (cdf.size() != t.hi - t.lo + 1) {
          throw FormatError("side-info table does not match tile support");
        }
        for (uint32_t v : cdf.cdf) w.Put<uint16_t>(static_cast<uint16_t>(v));
      }
    }
  }
  for (const auto& t : s.tiles) w.PutBytes(t.payload);
  return w.Take();
}

Bitstream ParseBitstream(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  for (char c : kBitstreamMagic) {
    if (r.Get<uint8_t>() != static_cast<uint8_t>(c)) {
      throw FormatError("not a QPF1 bitstream (bad magic)");
    }
  }
  Bitstream s;
  s.version = r.Get<uint16_t>();
  if (s.version != kBitstreamVersion) {
    throw FormatError("unsupported bitstream version " + std::to_string(s.version));
  }
  s.flags = r.Get<uint16_t>();
  if ((s.flags & ~kFlagSideInfoTables) != 0) {
    throw FormatError("unknown bitstream flags");
  }
  s.height = r.Get<uint32_t>();
  s.width = r.Get<uint32_t>();
  s.tile_size = r.Get<uint16_t>();
  s.tile_rows = r.Get<uint16_t>();
  s.tile_cols = r.Get<uint16_t>();
  s.crop_y = r.Get<uint32_t>();
  s.crop_x = r.Get<uint32_t>();
  s.num_queries = r.Get<uint16_t>();
  s.dim = r.Get<uint16_t>();
  s.model_digest = r.Get<uint64_t>();
  if (s.tile_size == 0 || s.num_queries == 0 || s.dim == 0) {
    throw FormatError("bitstream header has zero dimensions");
  }
  if (static_cast<uint64_t>(s.tile_rows) * s.tile_size + s.crop_y > s.height ||
      static_cast<uint64_t>(s.tile_cols) * s.tile_size + s.crop_x > s.width) {
    throw FormatError("tile grid exceeds image bounds");
  }
  const size_t tile_count = static_cast<size_t>(s.tile_rows) * s.tile_cols;
  const bool side_info = (s.flags & kFlagSideInfoTables) != 0;
  std::vector<uint32_t> lengths(tile_count);
  s.tiles.resize(tile_count);
  for (size_t i = 0; i < tile_count; ++i) {
    TileEntry& t = s.tiles[i];
    t.lo = r.Get<int16_t>();
    t.hi = r.Get<int16_t>();
    if (t.hi < t.lo) throw FormatError("tile support is empty");
    lengths[i] = r.Get<uint32_t>();
    if (side_info) {
      CdfTables tables;
      tables.lo = t.lo;
      tables.hi = t.hi;
      const int width = t.hi - t.lo + 1;
      for (int c = 0; c < s.dim; ++c) {
        QuantizedCdf cdf;
        cdf.offset = t.lo;
        cdf.cdf.resize(width + 1);
        for (int k = 0; k <= width; ++k) cdf.cdf[k] = r.Get<uint16_t>();
        cdf.cdf[width] = kCdfTotal;
        for (int k = 0; k < width; ++k) {
          if (cdf.cdf[k + 1] <= cdf.cdf[k]) {
            throw FormatError("side-info CDF not strictly increasing");
          }
        }
        if (cdf.cdf[0] != 0) throw FormatError("side-info CDF must start at 0");
        tables.channels.push_back(std::move(cdf));
      }
      t.tables = std::move(tables);
    }
  }
  for (size_t i = 0; i < tile_count; ++i) {
    auto b = r.GetBytes(lengths[i]);
    s.tiles[i].payload.assign(b.begin(), b.end());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after payloads");
  return s;
}

void WriteFile(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<uint8_t> ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace qpress
