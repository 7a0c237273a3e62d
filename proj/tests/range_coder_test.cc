#include "qpress/range_coder.h"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "qpress/entropy_model.h"
#include "qpress/errors.h"
#include "test_util.h"

namespace qpress {
namespace {

QuantizedCdf RandomTable(Rng& rng, int max_size) {
  const int n = 1 + static_cast<int>(rng.Below(max_size));
  std::vector<double> pmf(n);
  const double skew = 1.0 + 12.0 * rng.Uniform();
  for (double& p : pmf) p = std::pow(rng.Uniform(), skew);
  return QuantizePmf(pmf, static_cast<int32_t>(rng.Below(41)) - 20);
}

int32_t Sample(const QuantizedCdf& t, Rng& rng) {
  const auto target = static_cast<uint32_t>(rng.Below(kCdfTotal));
  const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), target);
  return t.offset + static_cast<int32_t>(it - t.cdf.begin()) - 1;
}

double CrossEntropyBits(std::span<const int32_t> symbols, const QuantizedCdf& t) {
  double bits = 0.0;
  for (int32_t s : symbols) bits -= std::log2(t.Frequency(s) / 65536.0);
  return bits;
}

TEST(RangeCoderTest, EmptyInputFlushesFiveBytes) {
  const QuantizedCdf t = QuantizePmf(std::vector<double>{1, 1}, 0);
  const auto bytes = RangeEncode(std::vector<int32_t>{}, t);
  EXPECT_EQ(bytes.size(), 5u);
  EXPECT_TRUE(RangeDecode(bytes, t, 0).empty());
}

TEST(RangeCoderTest, RandomTablesRoundTripExactly) {
  Rng rng(1);
  std::vector<QuantizedCdf> tables;
  for (int i = 0; i < 40; ++i) tables.push_back(RandomTable(rng, 300));
  std::vector<int32_t> symbols;
  std::vector<uint16_t> ids;
  for (int i = 0; i < 200000; ++i) {
    const auto id = static_cast<uint16_t>(rng.Below(tables.size()));
    ids.push_back(id);
    symbols.push_back(Sample(tables[id], rng));
  }
  const auto bytes = RangeEncode(symbols, tables, ids);
  EXPECT_EQ(RangeDecode(bytes, tables, ids), symbols);
}

TEST(RangeCoderTest, UniformlyDrawnSymbolsRoundTrip) {
  // Symbols drawn uniformly over the support, regardless of the table.
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const QuantizedCdf t = RandomTable(rng, 2000);
    std::vector<int32_t> symbols(5000);
    for (auto& s : symbols) s = t.offset + static_cast<int32_t>(rng.Below(t.size()));
    EXPECT_EQ(RangeDecode(RangeEncode(symbols, t), t, symbols.size()), symbols);
  }
}

TEST(RangeCoderTest, DegenerateAndSkewedTables) {
  const QuantizedCdf single = QuantizePmf(std::vector<double>{1.0}, 7);
  const std::vector<int32_t> same(100000, 7);
  const auto bytes = RangeEncode(same, single);
  EXPECT_EQ(bytes.size(), 5u);  // zero information
  EXPECT_EQ(RangeDecode(bytes, single, same.size()), same);

  // Maximal skew: 65535 vs 1.
  const QuantizedCdf skewed = QuantizePmf(std::vector<double>{1.0, 0.0}, 0);
  ASSERT_EQ(skewed.Frequency(1), 1u);
  Rng rng(3);
  std::vector<int32_t> mostly(50000, 0);
  for (int i = 0; i < 50; ++i) mostly[rng.Below(mostly.size())] = 1;
  EXPECT_EQ(RangeDecode(RangeEncode(mostly, skewed), skewed, mostly.size()), mostly);
  // Runs of the rare symbol, the worst case for renormalization.
  const std::vector<int32_t> rare(3000, 1);
  EXPECT_EQ(RangeDecode(RangeEncode(rare, skewed), skewed, rare.size()), rare);
}

TEST(RangeCoderTest, NearEntropyOnAKnownSource) {
  // {1 − 3t, t, t, t} with entropy 1.5 bits; t solved by bisection.
  auto entropy = [](double t) {
    return -(1 - 3 * t) * std::log2(1 - 3 * t) - 3 * t * std::log2(t);
  };
  double lo = 1e-9, hi = 0.25;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (entropy(mid) < 1.5 ? lo : hi) = mid;
  }
  const double t = 0.5 * (lo + hi);
  ASSERT_NEAR(entropy(t), 1.5, 1e-12);
  const std::vector<double> pmf = {1 - 3 * t, t, t, t};
  const QuantizedCdf table = QuantizePmf(pmf, 0);

  Rng rng(4);
  const size_t n = 100000;
  std::vector<int32_t> symbols(n);
  for (auto& s : symbols) s = Sample(table, rng);
  const auto bytes = RangeEncode(symbols, table);
  const double bits_per_symbol = 8.0 * bytes.size() / n;
  const double cross_entropy = CrossEntropyBits(symbols, table);
  EXPECT_LE(8.0 * bytes.size(), 1.01 * cross_entropy + 8.0 * 32);
  EXPECT_LE(bits_per_symbol, 1.515);
  EXPECT_GE(bits_per_symbol, 1.49);
}

TEST(RangeCoderTest, EncodingIsDeterministic) {
  Rng rng(5);
  const QuantizedCdf t = RandomTable(rng, 50);
  std::vector<int32_t> symbols(10000);
  for (auto& s : symbols) s = Sample(t, rng);
  EXPECT_EQ(RangeEncode(symbols, t), RangeEncode(symbols, t));
}

TEST(RangeCoderTest, OutOfSupportSymbolNamesItsIndex) {
  const QuantizedCdf t = QuantizePmf(std::vector<double>{1, 1, 1}, 0);
  try {
    RangeEncode(std::vector<int32_t>{0, 1, 3}, t);
    FAIL() << "expected CodingError";
  } catch (const CodingError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(RangeEncode(std::vector<int32_t>{-1}, t), CodingError);
}

TEST(RangeCoderTest, TruncatedOrPaddedStreamsAreRejected) {
  Rng rng(6);
  const QuantizedCdf t = RandomTable(rng, 30);
  std::vector<int32_t> symbols(2000);
  for (auto& s : symbols) s = Sample(t, rng);
  auto bytes = RangeEncode(symbols, t);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(RangeDecode(truncated, t, symbols.size()), CodingError);
  auto padded = bytes;
  padded.push_back(0);
  EXPECT_THROW(RangeDecode(padded, t, symbols.size()), CodingError);
  EXPECT_THROW(RangeDecode(std::vector<uint8_t>{1, 2}, t, 1), CodingError);
}

TEST(RangeCoderTest, CorruptedBytesNeverCrash) {
  Rng rng(7);
  const QuantizedCdf t = RandomTable(rng, 20);
  std::vector<int32_t> symbols(500);
  for (auto& s : symbols) s = Sample(t, rng);
  const auto bytes = RangeEncode(symbols, t);
  int detected = 0;
  for (size_t pos = 0; pos < bytes.size(); ++pos) {
    auto corrupt = bytes;
    corrupt[pos] ^= static_cast<uint8_t>(1 + rng.Below(255));
    try {
      const auto decoded = RangeDecode(corrupt, t, symbols.size());
      if (decoded != symbols) ++detected;
    } catch (const CodingError&) {
      ++detected;
    }
  }
  EXPECT_GT(detected, 0);
}

}  // namespace
}  // namespace qpress
