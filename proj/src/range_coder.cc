#include "qpress/range_coder.h"

#include <algorithm>
#include <string>

#include "qpress/errors.h"

namespace qpress {

namespace {
constexpr uint32_t kTop = 1u << 24;
constexpr int kFlushBytes = 5;
}  // namespace

void RangeEncoder::ShiftLow() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t pending = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(pending + carry));
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::Encode(uint32_t start, uint32_t freq) {
  const uint32_t r = range_ >> kCdfPrecision;
  low_ += static_cast<uint64_t>(r) * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    ShiftLow();
  }
}

std::vector<uint8_t> RangeEncoder::Finish() {
  for (int i = 0; i < kFlushBytes; ++i) ShiftLow();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < kFlushBytes; ++i) code_ = (code_ << 8) | NextByte();
}

uint8_t RangeDecoder::NextByte() {
  if (pos_ >= bytes_.size()) {
    throw CodingError("truncated range-coded payload");
  }
  return bytes_[pos_++];
}

int32_t RangeDecoder::Decode(const QuantizedCdf& table) {
  const uint32_t r = range_ >> kCdfPrecision;
  const uint32_t target = code_ / r;
  if (target >= kCdfTotal) throw CodingError("corrupt range-coded payload");
  // Last cdf entry <= target.
  const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), target);
  const auto index = static_cast<size_t>(it - table.cdf.begin()) - 1;
  if (index >= static_cast<size_t>(table.size())) {
    throw CodingError("corrupt range-coded payload");
  }
  const uint32_t start = table.cdf[index];
  const uint32_t freq = table.cdf[index + 1] - start;
  code_ -= r * start;
  range_ = r * freq;
  while (range_ < kTop) {
    code_ = (code_ << 8) | NextByte();
    range_ <<= 8;
  }
  return table.offset + static_cast<int32_t>(index);
}

std::vector<uint8_t> RangeEncode(std::span<const int32_t> symbols,
                                 std::span<const QuantizedCdf> tables,
                                 std::span<const uint16_t> table_ids) {
  if (symbols.size() != table_ids.size()) {
    throw ShapeError("one table id per symbol required");
  }
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    if (table_ids[i] >= tables.size()) {
      throw CodingError("table id out of range at index " + std::to_string(i));
    }
    const QuantizedCdf& t = tables[table_ids[i]];
    const int32_t s = symbols[i];
    if (!t.Contains(s)) {
      throw CodingError("symbol " + std::to_string(s) + " at index " +
                        std::to_string(i) + " outside table support [" +
                        std::to_string(t.offset) + ", " +
                        std::to_string(t.offset + t.size() - 1) + "]");
    }
    const uint32_t start = t.cdf[s - t.offset];
    enc.Encode(start, t.cdf[s - t.offset + 1] - start);
  }
  return enc.Finish();
}

std::vector<uint8_t> RangeEncode(std::span<const int32_t> symbols,
                                 const QuantizedCdf& table) {
  const std::vector<uint16_t> ids(symbols.size(), 0);
  return RangeEncode(symbols, std::span<const QuantizedCdf>(&table, 1), ids);
}

std::vector<int32_t> RangeDecode(std::span<const uint8_t> bytes,
                                 std::span<const QuantizedCdf> tables,
                                 std::span<const uint16_t> table_ids) {
  RangeDecoder dec(bytes);
  std::vector<int32_t> symbols(table_ids.size());
  for (size_t i = 0; i < table_ids.size(); ++i) {
    if (table_ids[i] >= tables.size()) {
      throw CodingError("table id out of range at index " + std::to_string(i));
    }
    symbols[i] = dec.Decode(tables[table_ids[i]]);
  }
  if (dec.consumed() != bytes.size()) {
    throw CodingError("range-coded payload has " +
                      std::to_string(bytes.size() - dec.consumed()) +
                      " trailing bytes");
  }
  return symbols;
}

std::vector<int32_t> RangeDecode(std::span<const uint8_t> bytes,
                                 const QuantizedCdf& table, size_t count) {
  const std::vector<uint16_t> ids(count, 0);
  return RangeDecode(bytes, std::span<const QuantizedCdf>(&table, 1), ids);
}

}  // namespace qpress
