#ifndef QPRESS_RANGE_CODER_H_
#define QPRESS_RANGE_CODER_H_

#include <cstdint>
#include <span>
#include <vector>

#include "qpress/entropy_model.h"

namespace qpress {

// Byte-oriented range coder: 64-bit low register with carry propagation,
// 32-bit range, 16-bit probabilities, renormalization one byte at a time
// whenever the range drops below 2^24. Single-use, single-threaded.
class RangeEncoder {
 public:
  // Codes the interval [start, start + freq) out of 2^16.
  void Encode(uint32_t start, uint32_t freq);
  // Flushes the remaining state; the encoder must not be used afterwards.
  std::vector<uint8_t> Finish();

 private:
  void ShiftLow();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes);

  // Decodes one symbol of the given table. Throws CodingError on truncated
  // or inconsistent input.
  int32_t Decode(const QuantizedCdf& table);
  size_t consumed() const { return pos_; }

 private:
  uint8_t NextByte();

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

// Every symbol uses table[table_ids[i]].
std::vector<uint8_t> RangeEncode(std::span<const int32_t> symbols,
                                 std::span<const QuantizedCdf> tables,
                                 std::span<const uint16_t> table_ids);
std::vector<uint8_t> RangeEncode(std::span<const int32_t> symbols,
                                 const QuantizedCdf& table);

// Decodes table_ids.size() symbols; the whole byte span must be consumed.
std::vector<int32_t> RangeDecode(std::span<const uint8_t> bytes,
                                 std::span<const QuantizedCdf> tables,
                                 std::span<const uint16_t> table_ids);
std::vector<int32_t> RangeDecode(std::span<const uint8_t> bytes,
                                 const QuantizedCdf& table, size_t count);

}  // namespace qpress

#endif  // QPRESS_RANGE_CODER_H_
