#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ztbe/bf16.hpp"

namespace ztbe {

// Tiling hierarchy: 8x8 FragTile, 16x16 TensorCoreTile (2x2 FragTiles,
// column-major), 64x64 BlockTile (4x4 TensorCoreTiles, row-major).
inline constexpr std::uint32_t kFragDim = 8;
inline constexpr std::uint32_t kTensorCoreDim = 16;
inline constexpr std::uint32_t kBlockDim = 64;
inline constexpr std::uint32_t kFragElements = kFragDim * kFragDim;
inline constexpr std::uint32_t kFragsPerTensorCoreTile = 4;
inline constexpr std::uint32_t kTensorCoreTilesPerBlock = 16;
inline constexpr std::uint32_t kFragsPerBlock =
    kFragsPerTensorCoreTile * kTensorCoreTilesPerBlock;
inline constexpr std::uint32_t kBlockElements = kBlockDim * kBlockDim;
inline constexpr std::size_t kSegmentAlignment = 16;

// Three bit-planes of the 3-bit codewords of one FragTile; bit p of each word
// belongs to element p = row * 8 + col. b1 holds the least significant bit.
struct FragTileCode {
  std::uint64_t b1 = 0;
  std::uint64_t b2 = 0;
  std::uint64_t b3 = 0;

  // Spatial indicator: 1 where the element took the high-frequency path.
  constexpr std::uint64_t indicator() const noexcept { return b1 | b2 | b3; }

  constexpr unsigned codeword(unsigned pos) const noexcept {
    return static_cast<unsigned>(((b3 >> pos) & 1u) << 2 | ((b2 >> pos) & 1u) << 1 |
                                 ((b1 >> pos) & 1u));
  }

  constexpr void set_codeword(unsigned pos, unsigned c) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << pos;
    b1 = (c & 1u) ? (b1 | bit) : (b1 & ~bit);
    b2 = (c & 2u) ? (b2 | bit) : (b2 & ~bit);
    b3 = (c & 4u) ? (b3 | bit) : (b3 & ~bit);
  }

  constexpr unsigned high_count() const noexcept {
    return static_cast<unsigned>(std::popcount(indicator()));
  }

  constexpr bool operator==(const FragTileCode &) const = default;
};

struct TileCoordinates {
  std::uint32_t block_row = 0;
  std::uint32_t block_col = 0;
  std::uint32_t tct_index = 0;  // row-major over the 4x4 grid
  std::uint32_t frag_index = 0; // column-major over the 2x2 grid
  std::uint32_t pos = 0;        // row * 8 + col within the FragTile

  constexpr bool operator==(const TileCoordinates &) const = default;
};

struct PaddedDims {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

TileCoordinates coords_of(std::uint32_t r, std::uint32_t c, PaddedDims dims);
std::pair<std::uint32_t, std::uint32_t> index_of(const TileCoordinates &t,
                                                 PaddedDims dims);

// Row and column offset of a block-local fragment ordinal (tct * 4 + frag)
// relative to the BlockTile origin.
constexpr std::pair<std::uint32_t, std::uint32_t>
fragment_origin(std::uint32_t block_fragment) noexcept {
  const std::uint32_t tct = block_fragment / kFragsPerTensorCoreTile;
  const std::uint32_t frag = block_fragment % kFragsPerTensorCoreTile;
  return {(tct / 4) * kTensorCoreDim + (frag % 2) * kFragDim,
          (tct % 4) * kTensorCoreDim + (frag / 2) * kFragDim};
}

constexpr std::uint32_t round_up(std::uint32_t v, std::uint32_t multiple) noexcept {
  return (v + multiple - 1) / multiple * multiple;
}

constexpr std::size_t align_segment(std::size_t bytes) noexcept {
  return (bytes + kSegmentAlignment - 1) / kSegmentAlignment * kSegmentAlignment;
}

struct MatrixHeader {
  std::uint32_t logical_rows = 0;
  std::uint32_t logical_cols = 0;
  std::uint32_t padded_rows = 0;
  std::uint32_t padded_cols = 0;
  std::int16_t base_exp = 0;
  BF16Word pad_word{};

  bool operator==(const MatrixHeader &) const = default;
};

struct BlockOffset {
  std::uint64_t h_start_bytes = 0;
  std::uint64_t l_start_bytes = 0;

  bool operator==(const BlockOffset &) const = default;
};

// Start indices of one fragment inside its BlockTile's H and L segments.
struct FragmentStart {
  std::uint32_t h = 0;
  std::uint32_t l = 0;
};

// Complete compressed representation. Bit-planes are stored one word per
// FragTile in canonical order: BlockTiles row-major, TensorCoreTiles
// row-major, FragTiles column-major.
struct CompressedMatrix {
  MatrixHeader header;
  std::vector<std::uint64_t> b1;
  std::vector<std::uint64_t> b2;
  std::vector<std::uint64_t> b3;
  std::vector<std::uint8_t> h;  // PackedSignMantissa bytes
  std::vector<BF16Word> l;      // FullValue words
  std::vector<BlockOffset> offsets;

  std::uint32_t block_rows() const noexcept { return header.padded_rows / kBlockDim; }
  std::uint32_t block_cols() const noexcept { return header.padded_cols / kBlockDim; }
  std::size_t n_blocktiles() const noexcept {
    return static_cast<std::size_t>(block_rows()) * block_cols();
  }
  std::size_t n_fragtiles() const noexcept { return n_blocktiles() * kFragsPerBlock; }

  FragTileCode fragment(std::size_t ordinal) const noexcept {
    return {b1[ordinal], b2[ordinal], b3[ordinal]};
  }

  // H and L segments of a BlockTile, including alignment padding.
  std::span<const std::uint8_t> h_segment(std::size_t block) const;
  std::span<const BF16Word> l_segment(std::size_t block) const;

  // Per-fragment segment starts recomputed by a popcount prefix scan.
  std::array<FragmentStart, kFragsPerBlock> fragment_starts(std::size_t block) const;

  bool operator==(const CompressedMatrix &) const = default;
};

// Pad word used for elements outside the logical matrix: +2^(first - 127),
// an in-window value with zero sign and mantissa.
constexpr BF16Word pad_word_for(int base_exp) noexcept {
  return make_bf16(0, static_cast<unsigned>(base_exp + 1), 0);
}

// Full structural validation; throws CorruptError on the first violation.
void validate(const CompressedMatrix &m);

// Stored payload in bits: bit-planes, H and L including alignment padding, and
// the offset array. The header is excluded.
std::uint64_t payload_bits(const CompressedMatrix &m);

// 16 * logical elements / payload_bits.
double compression_ratio(const CompressedMatrix &m);

double bits_per_element(const CompressedMatrix &m);

// Serialized container size in bytes (header + payload).
std::size_t container_size(const CompressedMatrix &m);

inline constexpr std::size_t kContainerHeaderBytes = 60;
inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> serialize(const CompressedMatrix &m);

// Throws BadMagicError, VersionError, TruncatedError or CorruptError.
CompressedMatrix deserialize(std::span<const std::uint8_t> bytes);

} // namespace ztbe
