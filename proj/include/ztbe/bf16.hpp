#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <utility>

#include "ztbe/error.hpp"

namespace ztbe {

// Raw BFloat16 bit pattern. Every one of the 65536 patterns is a valid value
// as far as the codec is concerned; no numeric interpretation is applied.
struct BF16Word {
  std::uint16_t bits = 0;

  constexpr auto operator<=>(const BF16Word &) const = default;
};

// 1 sign bit, 8 exponent bits, 7 mantissa bits.
inline constexpr unsigned kExponentBits = 8;
inline constexpr unsigned kMantissaBits = 7;
inline constexpr unsigned kExponentCount = 1u << kExponentBits;
inline constexpr unsigned kMantissaMask = (1u << kMantissaBits) - 1;
inline constexpr unsigned kExponentMask = kExponentCount - 1;
inline constexpr int kExponentBias = 127;

// Field values are kept in wide integers so that out-of-range input to
// assemble_fields() can be detected instead of silently truncated.
struct FieldTriple {
  std::uint32_t sign = 0;
  std::uint32_t exponent = 0;
  std::uint32_t mantissa = 0;

  constexpr bool operator==(const FieldTriple &) const = default;
};

// bit 7 = sign, bits 6..0 = mantissa.
struct PackedSM {
  std::uint8_t byte = 0;

  constexpr bool operator==(const PackedSM &) const = default;
};

constexpr unsigned sign_of(BF16Word w) noexcept { return w.bits >> 15; }

constexpr unsigned exponent_of(BF16Word w) noexcept {
  return (w.bits >> kMantissaBits) & kExponentMask;
}

constexpr unsigned mantissa_of(BF16Word w) noexcept {
  return w.bits & kMantissaMask;
}

constexpr FieldTriple split_fields(BF16Word w) noexcept {
  return {sign_of(w), exponent_of(w), mantissa_of(w)};
}

// Unchecked concatenation; callers guarantee the field ranges.
constexpr BF16Word make_bf16(unsigned sign, unsigned exponent,
                             unsigned mantissa) noexcept {
  return BF16Word{static_cast<std::uint16_t>(
      (sign << 15) | (exponent << kMantissaBits) | mantissa)};
}

inline BF16Word assemble_fields(const FieldTriple &t) {
  if (t.sign > 1 || t.exponent > kExponentMask || t.mantissa > kMantissaMask) {
    throw RangeError("bf16 field out of range: sign=" + std::to_string(t.sign) +
                     " exponent=" + std::to_string(t.exponent) +
                     " mantissa=" + std::to_string(t.mantissa));
  }
  return make_bf16(t.sign, t.exponent, t.mantissa);
}

constexpr PackedSM pack_sm(unsigned sign, unsigned mantissa) noexcept {
  return PackedSM{
      static_cast<std::uint8_t>(((sign & 1u) << 7) | (mantissa & kMantissaMask))};
}

constexpr std::pair<unsigned, unsigned> unpack_sm(PackedSM p) noexcept {
  return {static_cast<unsigned>(p.byte >> 7),
          static_cast<unsigned>(p.byte & kMantissaMask)};
}

// Exact widening: a BF16 value is the upper half of an IEEE binary32.
inline float to_float(BF16Word w) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(w.bits) << 16);
}

// Round-to-nearest-even narrowing. NaNs stay NaN (quieted).
inline BF16Word from_float(float f) noexcept {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  if ((u & 0x7F800000u) == 0x7F800000u && (u & 0x007FFFFFu) != 0) {
    return BF16Word{static_cast<std::uint16_t>((u >> 16) | 0x0040u)};
  }
  const std::uint32_t rounding = 0x7FFFu + ((u >> 16) & 1u);
  return BF16Word{static_cast<std::uint16_t>((u + rounding) >> 16)};
}

} // namespace ztbe
