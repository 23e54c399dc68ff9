#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "ztbe/bf16.hpp"

using namespace ztbe;

TEST(Bf16, SplitFieldsOfKnownPatterns) {
  EXPECT_EQ(split_fields(BF16Word{0x3F80}), (FieldTriple{0, 127, 0}));
  EXPECT_EQ(split_fields(BF16Word{0x8000}), (FieldTriple{1, 0, 0}));
  EXPECT_EQ(split_fields(BF16Word{0x7FC0}), (FieldTriple{0, 255, 64}));
}

TEST(Bf16, AssembleFields) {
  EXPECT_EQ(assemble_fields({0, 120, 0x40}).bits, 0x3C40);
  EXPECT_EQ(assemble_fields({1, 128, 0}).bits, 0xC000);
}

TEST(Bf16, AssembleRejectsOutOfRangeFields) {
  EXPECT_THROW(assemble_fields({2, 0, 0}), RangeError);
  EXPECT_THROW(assemble_fields({0, 256, 0}), RangeError);
  EXPECT_THROW(assemble_fields({0, 0, 128}), RangeError);
}

TEST(Bf16, SplitAssembleIsIdentityOnAllPatterns) {
  for (unsigned bits = 0; bits < 65536; ++bits) {
    const BF16Word w{static_cast<std::uint16_t>(bits)};
    ASSERT_EQ(assemble_fields(split_fields(w)), w) << bits;
  }
}

TEST(Bf16, PackedSignMantissa) {
  EXPECT_EQ(pack_sm(1, 0x7F).byte, 0xFF);
  EXPECT_EQ(pack_sm(0, 0x00).byte, 0x00);
  for (unsigned s = 0; s < 2; ++s) {
    for (unsigned m = 0; m < 128; ++m) {
      EXPECT_EQ(unpack_sm(pack_sm(s, m)), std::make_pair(s, m));
    }
  }
}

TEST(Bf16, PackedSignMantissaPlusExponentRebuildsWord) {
  for (unsigned bits = 0; bits < 65536; ++bits) {
    const BF16Word w{static_cast<std::uint16_t>(bits)};
    const auto [s, m] = unpack_sm(pack_sm(sign_of(w), mantissa_of(w)));
    ASSERT_EQ(make_bf16(s, exponent_of(w), m), w);
  }
}

TEST(Bf16, WideningIsExact) {
  EXPECT_EQ(to_float(BF16Word{0x3F80}), 1.0f);
  EXPECT_EQ(to_float(BF16Word{0xC000}), -2.0f);
  EXPECT_TRUE(std::signbit(to_float(BF16Word{0x8000})));
  EXPECT_TRUE(std::isinf(to_float(BF16Word{0x7F80})));
  EXPECT_TRUE(std::isnan(to_float(BF16Word{0x7FC0})));
}

TEST(Bf16, NarrowingRoundsToNearestEven) {
  EXPECT_EQ(from_float(1.0f).bits, 0x3F80);
  // 1 + 2^-8 is halfway between 1 and 1 + 2^-7: ties to the even mantissa.
  EXPECT_EQ(from_float(1.0f + 0x1p-8f).bits, 0x3F80);
  EXPECT_EQ(from_float(1.0f + 3 * 0x1p-8f).bits, 0x3F82);
  EXPECT_EQ(from_float(1.0f + 0x1p-8f + 0x1p-20f).bits, 0x3F81);
  EXPECT_EQ(from_float(std::numeric_limits<float>::infinity()).bits, 0x7F80);
  EXPECT_TRUE(std::isnan(to_float(from_float(std::numeric_limits<float>::quiet_NaN()))));
  // A signalling NaN whose payload sits only in the low half stays a NaN.
  EXPECT_TRUE(std::isnan(to_float(from_float(std::bit_cast<float>(0x7F800001u)))));
}

TEST(Bf16, NarrowingOfWidenedValueIsIdentity) {
  for (unsigned bits = 0; bits < 65536; ++bits) {
    const BF16Word w{static_cast<std::uint16_t>(bits)};
    if (exponent_of(w) == 255 && mantissa_of(w) != 0) {
      continue;
    }
    ASSERT_EQ(from_float(to_float(w)), w) << bits;
  }
}
