#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ztbe/bf16.hpp"
#include "ztbe/exponent_analysis.hpp"
#include "ztbe/format.hpp"

namespace ztbe {

struct WeightMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<BF16Word> data; // row-major

  WeightMatrix() = default;
  WeightMatrix(std::uint32_t r, std::uint32_t c, std::vector<BF16Word> d);
  WeightMatrix(std::uint32_t r, std::uint32_t c, BF16Word fill = {});

  BF16Word at(std::uint32_t r, std::uint32_t c) const noexcept {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  BF16Word &at(std::uint32_t r, std::uint32_t c) noexcept {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  bool operator==(const WeightMatrix &) const = default;
};

struct CompressOptions {
  unsigned workers = 1;
};

// Exponent window is chosen per matrix; BlockTiles are encoded independently
// and merged in canonical order, so the result does not depend on workers.
CompressedMatrix compress(const WeightMatrix &w, const CompressOptions &options = {});

// Same, with the window forced (used to build all-fallback test matrices).
CompressedMatrix compress_with_window(const WeightMatrix &w, int base_exp,
                                      const CompressOptions &options = {});

// Sequential decoder: walks every fragment in canonical order with running H
// and L cursors. Shares no indexing logic with the warp simulator.
WeightMatrix decompress_reference(const CompressedMatrix &m);

// One fragment's view of its BlockTile segments.
struct FragmentInput {
  FragTileCode code;
  std::span<const std::uint8_t> h_seg;
  std::span<const BF16Word> l_seg;
  std::uint32_t h_start = 0;
  std::uint32_t l_start = 0;
  int base_exp = 0;
};

using FragmentWords = std::array<BF16Word, kFragElements>;

// Reference decode of a single fragment, output ordered by position.
FragmentWords decode_fragment_reference(const FragmentInput &in);

inline constexpr unsigned kWarpLanes = 32;

// Per-element record of what a lane did; both path indices are always
// computed, `high` selects which one was used.
struct LaneStep {
  unsigned lane = 0;
  unsigned slot = 0; // k in {0, 1}
  unsigned pos = 0;  // 2 * lane + slot
  bool high = false;
  std::uint32_t idx_h = 0;
  std::uint32_t idx_l = 0;
  unsigned codeword = 0;
  int exponent = 0; // reconstructed exponent (high path) or the stored one
  BF16Word word{};
  unsigned ops = 0;
};

// Thread-local decode of lane l: elements 2l and 2l + 1 of the fragment.
// Throws CorruptError if an index runs past its segment.
std::pair<BF16Word, BF16Word> decode_lane(const FragmentInput &in, unsigned lane);

// Traced variant; fills the two steps of the lane.
std::array<LaneStep, 2> trace_lane(const FragmentInput &in, unsigned lane);

struct WarpStats {
  unsigned ops_per_lane = 0;
  bool uniform = true;   // every lane executed the same operation count
  unsigned h_reads = 0;
  unsigned l_reads = 0;
};

// All 32 lanes in lockstep. Throws Error if lanes diverge in operation count.
FragmentWords decode_fragment_warp(const FragmentInput &in, WarpStats *stats = nullptr);

std::vector<LaneStep> trace_fragment_warp(const FragmentInput &in);

// Gather the inputs of one fragment (block-local ordinal 0..63).
FragmentInput fragment_input(const CompressedMatrix &m, std::size_t block,
                             std::uint32_t block_fragment);

// Full matrix decode through the warp simulator.
WeightMatrix decompress_warp(const CompressedMatrix &m);

struct RoundtripReport {
  bool ok = false;
  std::string stage;  // first failing stage, empty on success
  std::optional<std::pair<std::uint32_t, std::uint32_t>> first_mismatch;
  ExponentWindow window{};
  double ratio = 0.0;
  double bits_per_element = 0.0;
  double window_coverage = 0.0;
  double r3 = 0.0;
  std::size_t container_bytes = 0;
};

// compress -> serialize -> deserialize -> reference and warp decoders ->
// bitwise comparison with the input.
RoundtripReport verify_roundtrip(const WeightMatrix &w, const CompressOptions &options = {});

std::optional<std::pair<std::uint32_t, std::uint32_t>>
first_difference(const WeightMatrix &a, const WeightMatrix &b);

} // namespace ztbe
