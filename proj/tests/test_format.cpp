#include <cstring>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ztbe/codec.hpp"
#include "ztbe/format.hpp"

using namespace ztbe;
using ztbe::testing::filled;
using ztbe::testing::mixed_matrix;

namespace {

template <typename T> T read_le(const std::vector<std::uint8_t> &b, std::size_t at) {
  T v;
  std::memcpy(&v, b.data() + at, sizeof v);
  return v;
}

} // namespace

TEST(Coordinates, KnownPositions) {
  const PaddedDims d{64, 64};
  EXPECT_EQ(coords_of(0, 0, d), (TileCoordinates{0, 0, 0, 0, 0}));
  EXPECT_EQ(coords_of(8, 0, d), (TileCoordinates{0, 0, 0, 1, 0}));
  EXPECT_EQ(coords_of(0, 8, d), (TileCoordinates{0, 0, 0, 2, 0}));
  EXPECT_EQ(coords_of(9, 10, d), (TileCoordinates{0, 0, 0, 3, 10}));
  EXPECT_EQ(coords_of(0, 16, d), (TileCoordinates{0, 0, 1, 0, 0}));
  EXPECT_EQ(coords_of(16, 0, d), (TileCoordinates{0, 0, 4, 0, 0}));
  EXPECT_EQ(coords_of(63, 63, d), (TileCoordinates{0, 0, 15, 3, 63}));
  EXPECT_EQ(coords_of(70, 130, PaddedDims{128, 192}), (TileCoordinates{1, 2, 0, 0, 6 * 8 + 2}));
}

TEST(Coordinates, RoundTripIsBijective) {
  const PaddedDims d{128, 192};
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t,
                      std::uint32_t>>
      seen;
  for (std::uint32_t r = 0; r < d.rows; ++r) {
    for (std::uint32_t c = 0; c < d.cols; ++c) {
      const auto t = coords_of(r, c, d);
      ASSERT_EQ(index_of(t, d), std::make_pair(r, c));
      seen.insert({t.block_row, t.block_col, t.tct_index, t.frag_index, t.pos});
    }
  }
  EXPECT_EQ(seen.size(), std::size_t{d.rows} * d.cols);
}

TEST(Coordinates, FragmentOriginAgreesWithCoordinates) {
  const PaddedDims d{64, 64};
  for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
    const auto [r, c] = fragment_origin(f);
    const auto t = coords_of(r, c, d);
    EXPECT_EQ(t.tct_index * kFragsPerTensorCoreTile + t.frag_index, f);
    EXPECT_EQ(t.pos, 0u);
  }
}

TEST(Coordinates, OutOfRange) {
  EXPECT_THROW(coords_of(64, 0, {64, 64}), RangeError);
  EXPECT_THROW(coords_of(0, 64, {64, 64}), RangeError);
  EXPECT_THROW(coords_of(0, 0, {60, 64}), InvalidArgument);
  EXPECT_THROW(index_of({1, 0, 0, 0, 0}, {64, 64}), RangeError);
  EXPECT_THROW(index_of({0, 0, 16, 0, 0}, {64, 64}), RangeError);
  EXPECT_THROW(index_of({0, 0, 0, 4, 0}, {64, 64}), RangeError);
  EXPECT_THROW(index_of({0, 0, 0, 0, 64}, {64, 64}), RangeError);
}

TEST(Segments, AlignmentAndScan) {
  EXPECT_EQ(align_segment(0), 0u);
  EXPECT_EQ(align_segment(1), 16u);
  EXPECT_EQ(align_segment(16), 16u);
  EXPECT_EQ(align_segment(17), 32u);

  std::mt19937_64 rng(3);
  const auto cm = compress(mixed_matrix(128, 130, rng, 0.02, 0.2));
  for (std::size_t b = 0; b < cm.n_blocktiles(); ++b) {
    EXPECT_EQ(cm.offsets[b].h_start_bytes % kSegmentAlignment, 0u);
    EXPECT_EQ(cm.offsets[b].l_start_bytes % kSegmentAlignment, 0u);
    const auto starts = cm.fragment_starts(b);
    std::uint32_t h = 0, l = 0;
    for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
      EXPECT_EQ(starts[f].h, h);
      EXPECT_EQ(starts[f].l, l);
      const unsigned ones = cm.fragment(b * kFragsPerBlock + f).high_count();
      h += ones;
      l += kFragElements - ones;
    }
    EXPECT_EQ(cm.h_segment(b).size(), align_segment(h));
    EXPECT_EQ(cm.l_segment(b).size() * 2, align_segment(2 * l));
  }
}

TEST(Payload, AllInWindowBlock) {
  const auto cm = compress(filled(64, 64, 0x3F80));
  EXPECT_EQ(cm.header.base_exp, 120);
  EXPECT_EQ(cm.h.size(), 4096u);
  EXPECT_TRUE(cm.l.empty());
  // 192 bits of planes + 64 H bytes per fragment, plus one 128-bit offset.
  EXPECT_EQ(payload_bits(cm), 64u * (192 + 512) + 128);
  EXPECT_DOUBLE_EQ(bits_per_element(cm), 11.03125);
  EXPECT_DOUBLE_EQ(bits_per_element(cm) - 128.0 / 4096, average_bits(3, 1.0));
  EXPECT_NEAR(compression_ratio(cm), 16.0 / 11.03125, 1e-15);
}

TEST(Payload, AllFallbackBlock) {
  const auto cm = compress_with_window(filled(64, 64, 0x3F80), 0);
  EXPECT_TRUE(cm.h.empty());
  EXPECT_EQ(cm.l.size(), 4096u);
  EXPECT_EQ(payload_bits(cm), 64u * (192 + 1024) + 128);
  EXPECT_DOUBLE_EQ(bits_per_element(cm), 19.03125);
  EXPECT_LT(compression_ratio(cm), 1.0);
}

TEST(Payload, SmallMatrixPaysForItsPadding) {
  const auto cm = compress(filled(8, 8, 0x3F80));
  EXPECT_EQ(cm.header.padded_rows, 64u);
  EXPECT_EQ(payload_bits(cm), 64u * (192 + 512) + 128);
  EXPECT_DOUBLE_EQ(bits_per_element(cm), 45184.0 / 64);
}

TEST(Container, HeaderLayout) {
  const auto cm = compress(filled(8, 8, 0x3F80));
  const auto bytes = serialize(cm);
  ASSERT_EQ(bytes.size(), container_size(cm));
  EXPECT_EQ(bytes.size(), kContainerHeaderBytes + 64 * 24 + 16 + 4096);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ZTBE");
  EXPECT_EQ(read_le<std::uint16_t>(bytes, 4), 1);
  EXPECT_EQ(read_le<std::uint16_t>(bytes, 6), 0);
  EXPECT_EQ(read_le<std::uint32_t>(bytes, 8), 8u);
  EXPECT_EQ(read_le<std::uint32_t>(bytes, 12), 8u);
  EXPECT_EQ(read_le<std::uint32_t>(bytes, 16), 64u);
  EXPECT_EQ(read_le<std::uint32_t>(bytes, 20), 64u);
  EXPECT_EQ(read_le<std::int16_t>(bytes, 24), 120);
  EXPECT_EQ(read_le<std::uint16_t>(bytes, 26), 0x3C80);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 28), 64u);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 36), 4096u);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 44), 0u);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 52), 1u);
  // Fragment 0 holds the 1.0 values (c = 7); every other fragment is padding (c = 1).
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 60), ~std::uint64_t{0});
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 60 + 64 * 8), ~std::uint64_t{0});
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 60 + 65 * 8), 0u);
  EXPECT_EQ(cm.header.pad_word, pad_word_for(120));
}

TEST(Container, RoundTripOnRandomMatrices) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const auto rows = static_cast<std::uint32_t>(1 + rng() % 150);
    const auto cols = static_cast<std::uint32_t>(1 + rng() % 150);
    const auto cm = compress(mixed_matrix(rows, cols, rng, 0.01 * (1 + i % 5), 0.1));
    const auto bytes = serialize(cm);
    ASSERT_EQ(deserialize(bytes), cm) << i;
    ASSERT_EQ(serialize(deserialize(bytes)), bytes) << i;
  }
}

TEST(Container, ParseErrorsAreDistinct) {
  const auto good = serialize(compress(filled(64, 64, 0x3F80)));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), BadMagicError);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(deserialize(bad_version), VersionError);

  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{30}, good.size() - 1}) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + n);
    EXPECT_THROW(deserialize(cut), TruncatedError) << n;
  }

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), CorruptError);

  auto flags = good;
  flags[6] = 1;
  EXPECT_THROW(deserialize(flags), CorruptError);

  // Clearing one indicator bit moves an element to L without moving its data.
  auto popcount = good;
  popcount[60] &= 0xFE;
  popcount[60 + 512] &= 0xFE;
  popcount[60 + 1024] &= 0xFE;
  EXPECT_THROW(deserialize(popcount), CorruptError);
}

TEST(Container, FormatErrorsShareABase) {
  auto bytes = serialize(compress(filled(64, 64, 0x3F80)));
  bytes[1] = 0;
  EXPECT_THROW(deserialize(bytes), FormatError);
  EXPECT_THROW(deserialize(bytes), Error);
}

TEST(Validate, RejectsStructuralViolations) {
  std::mt19937_64 rng(8);
  const auto base = compress(mixed_matrix(130, 70, rng, 0.02, 0.3));
  EXPECT_NO_THROW(validate(base));

  auto m = base;
  m.offsets[1].h_start_bytes += 16;
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.offsets[1].l_start_bytes += 1;
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.header.pad_word.bits ^= 1;
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.header.padded_rows = 64;
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.b1.pop_back();
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.h.push_back(0);
  EXPECT_THROW(validate(m), CorruptError);

  m = base;
  m.header.base_exp = 249;
  EXPECT_THROW(validate(m), CorruptError);
}

TEST(Validate, RejectsFallbackWordsThatBelongInTheWindow) {
  auto m = compress_with_window(filled(64, 64, 0x3F80), 0);
  EXPECT_NO_THROW(validate(m));
  m.l[5] = make_bf16(0, 3, 0);
  EXPECT_THROW(validate(m), CorruptError);
}
