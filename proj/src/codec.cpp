#include "ztbe/codec.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "ztbe/error.hpp"

namespace ztbe {

namespace {

struct BlockEncoding {
  std::array<FragTileCode, kFragsPerBlock> codes{};
  std::vector<std::uint8_t> h;
  std::vector<BF16Word> l;
};

BlockEncoding encode_block(const WeightMatrix &w, const ExponentWindow &window,
                           BF16Word pad, std::uint32_t block_row, std::uint32_t block_col) {
  BlockEncoding out;
  out.h.reserve(kBlockElements);
  for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
    const auto [fr, fc] = fragment_origin(f);
    const std::uint32_t row0 = block_row * kBlockDim + fr;
    const std::uint32_t col0 = block_col * kBlockDim + fc;
    FragTileCode &code = out.codes[f];
    for (unsigned pos = 0; pos < kFragElements; ++pos) {
      const std::uint32_t r = row0 + pos / kFragDim;
      const std::uint32_t c = col0 + pos % kFragDim;
      const BF16Word word = (r < w.rows && c < w.cols) ? w.at(r, c) : pad;
      const unsigned e = exponent_of(word);
      if (window.contains(e)) {
        code.set_codeword(pos, e - static_cast<unsigned>(window.base_exp));
        out.h.push_back(pack_sm(sign_of(word), mantissa_of(word)).byte);
      } else {
        out.l.push_back(word);
      }
    }
  }
  out.h.resize(align_segment(out.h.size()), 0);
  out.l.resize(align_segment(out.l.size() * 2) / 2, BF16Word{});
  return out;
}

void check_shape(const WeightMatrix &w) {
  if (w.rows == 0 || w.cols == 0) {
    throw InvalidArgument("compress: empty matrix");
  }
  if (w.data.size() != static_cast<std::size_t>(w.rows) * w.cols) {
    throw InvalidArgument("compress: data length does not match dims");
  }
}

void check_layout(const CompressedMatrix &m) {
  const std::size_t n_frag = m.n_fragtiles();
  if (n_frag == 0 || m.b1.size() != n_frag || m.b2.size() != n_frag ||
      m.b3.size() != n_frag || m.offsets.size() != m.n_blocktiles() ||
      m.header.logical_rows > m.header.padded_rows ||
      m.header.logical_cols > m.header.padded_cols) {
    throw CorruptError("compressed matrix layout inconsistent with its header");
  }
}

// Scatter a decoded fragment into the logical output, dropping padding.
void scatter_fragment(WeightMatrix &out, std::uint32_t block_row, std::uint32_t block_col,
                      std::uint32_t f, const FragmentWords &words) {
  const auto [fr, fc] = fragment_origin(f);
  const std::uint32_t row0 = block_row * kBlockDim + fr;
  const std::uint32_t col0 = block_col * kBlockDim + fc;
  for (unsigned pos = 0; pos < kFragElements; ++pos) {
    const std::uint32_t r = row0 + pos / kFragDim;
    const std::uint32_t c = col0 + pos % kFragDim;
    if (r < out.rows && c < out.cols) {
      out.at(r, c) = words[pos];
    }
  }
}

BF16Word reassemble(unsigned packed, int base_exp, unsigned codeword) {
  const int e = base_exp + static_cast<int>(codeword);
  if (e < 0 || e > static_cast<int>(kExponentMask)) {
    throw CorruptError("reconstructed exponent out of range");
  }
  const auto [sign, mantissa] = unpack_sm(PackedSM{static_cast<std::uint8_t>(packed)});
  return make_bf16(sign, static_cast<unsigned>(e), mantissa);
}

} // namespace

WeightMatrix::WeightMatrix(std::uint32_t r, std::uint32_t c, std::vector<BF16Word> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != static_cast<std::size_t>(rows) * cols) {
    throw InvalidArgument("WeightMatrix: data length does not match dims");
  }
}

WeightMatrix::WeightMatrix(std::uint32_t r, std::uint32_t c, BF16Word fill)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

CompressedMatrix compress(const WeightMatrix &w, const CompressOptions &options) {
  check_shape(w);
  const ExponentWindow window = select_window(compute_histogram(w.data));
  return compress_with_window(w, window.base_exp, options);
}

CompressedMatrix compress_with_window(const WeightMatrix &w, int base_exp,
                                      const CompressOptions &options) {
  check_shape(w);
  if (base_exp < -1 || base_exp > 248) {
    throw InvalidArgument("compress: base_exp outside [-1, 248]");
  }
  const ExponentWindow window{base_exp, 0};

  CompressedMatrix m;
  m.header.logical_rows = w.rows;
  m.header.logical_cols = w.cols;
  m.header.padded_rows = round_up(w.rows, kBlockDim);
  m.header.padded_cols = round_up(w.cols, kBlockDim);
  m.header.base_exp = static_cast<std::int16_t>(base_exp);
  m.header.pad_word = pad_word_for(base_exp);

  const std::uint32_t block_cols = m.block_cols();
  const std::size_t n_blocks = m.n_blocktiles();
  std::vector<BlockEncoding> blocks(n_blocks);
  auto encode = [&](std::size_t b) {
    blocks[b] = encode_block(w, window, m.header.pad_word,
                             static_cast<std::uint32_t>(b / block_cols),
                             static_cast<std::uint32_t>(b % block_cols));
  };

  const unsigned workers =
      static_cast<unsigned>(std::clamp<std::size_t>(options.workers, 1, n_blocks));
  if (workers == 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) {
      encode(b);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < n_blocks; b = next++) {
          encode(b);
        }
      });
    }
  }

  // Ordered merge.
  std::size_t h_total = 0;
  std::size_t l_total = 0;
  for (const BlockEncoding &b : blocks) {
    h_total += b.h.size();
    l_total += b.l.size();
  }
  m.b1.reserve(n_blocks * kFragsPerBlock);
  m.b2.reserve(n_blocks * kFragsPerBlock);
  m.b3.reserve(n_blocks * kFragsPerBlock);
  m.h.reserve(h_total);
  m.l.reserve(l_total);
  m.offsets.reserve(n_blocks);
  for (BlockEncoding &b : blocks) {
    m.offsets.push_back({m.h.size(), m.l.size() * 2});
    for (const FragTileCode &code : b.codes) {
      m.b1.push_back(code.b1);
      m.b2.push_back(code.b2);
      m.b3.push_back(code.b3);
    }
    m.h.insert(m.h.end(), b.h.begin(), b.h.end());
    m.l.insert(m.l.end(), b.l.begin(), b.l.end());
    b = BlockEncoding{};
  }
  return m;
}

WeightMatrix decompress_reference(const CompressedMatrix &m) {
  check_layout(m);
  WeightMatrix out(m.header.logical_rows, m.header.logical_cols);
  const int base_exp = m.header.base_exp;
  const std::uint32_t block_cols = m.block_cols();
  FragmentWords words{};
  for (std::size_t b = 0; b < m.n_blocktiles(); ++b) {
    const auto h_seg = m.h_segment(b);
    const auto l_seg = m.l_segment(b);
    std::size_t h_cursor = 0;
    std::size_t l_cursor = 0;
    for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
      const FragTileCode code = m.fragment(b * kFragsPerBlock + f);
      for (unsigned pos = 0; pos < kFragElements; ++pos) {
        const unsigned c = code.codeword(pos);
        if (c != 0) {
          if (h_cursor >= h_seg.size()) {
            throw CorruptError("H segment exhausted in BlockTile " + std::to_string(b));
          }
          words[pos] = reassemble(h_seg[h_cursor++], base_exp, c);
        } else {
          if (l_cursor >= l_seg.size()) {
            throw CorruptError("L segment exhausted in BlockTile " + std::to_string(b));
          }
          words[pos] = l_seg[l_cursor++];
        }
      }
      scatter_fragment(out, static_cast<std::uint32_t>(b / block_cols),
                       static_cast<std::uint32_t>(b % block_cols), f, words);
    }
  }
  return out;
}

FragmentWords decode_fragment_reference(const FragmentInput &in) {
  FragmentWords words{};
  std::size_t h_cursor = in.h_start;
  std::size_t l_cursor = in.l_start;
  for (unsigned pos = 0; pos < kFragElements; ++pos) {
    const unsigned c = in.code.codeword(pos);
    if (c != 0) {
      if (h_cursor >= in.h_seg.size()) {
        throw CorruptError("H segment exhausted");
      }
      words[pos] = reassemble(in.h_seg[h_cursor++], in.base_exp, c);
    } else {
      if (l_cursor >= in.l_seg.size()) {
        throw CorruptError("L segment exhausted");
      }
      words[pos] = in.l_seg[l_cursor++];
    }
  }
  return words;
}

std::array<LaneStep, 2> trace_lane(const FragmentInput &in, unsigned lane) {
  if (lane >= kWarpLanes) {
    throw RangeError("trace_lane: lane id out of range");
  }
  std::array<LaneStep, 2> steps{};
  unsigned ops = 0;
  // Spatial indicator, shared by both slots.
  const std::uint64_t indicator = in.code.b1 | in.code.b2 | in.code.b3;
  ops += 2;
  for (unsigned k = 0; k < 2; ++k) {
    LaneStep &s = steps[k];
    s.lane = lane;
    s.slot = k;
    s.pos = 2 * lane + k;
    const std::uint64_t mask = (std::uint64_t{1} << s.pos) - 1;
    s.idx_h = static_cast<std::uint32_t>(std::popcount(indicator & mask));
    s.high = ((indicator >> s.pos) & 1u) != 0;
    s.idx_l = s.pos - s.idx_h;
    s.codeword = in.code.codeword(s.pos);
    const int e = in.base_exp + static_cast<int>(s.codeword);
    ops += 8;

    // Both index computations are done above; only the selected buffer is read.
    const std::size_t h_index = std::size_t{in.h_start} + s.idx_h;
    const std::size_t l_index = std::size_t{in.l_start} + s.idx_l;
    if (s.high ? h_index >= in.h_seg.size() : l_index >= in.l_seg.size()) {
      throw CorruptError("lane " + std::to_string(lane) + " index past segment end");
    }
    const unsigned packed = s.high ? in.h_seg[h_index] : 0u;
    const BF16Word fallback = s.high ? BF16Word{} : in.l_seg[l_index];
    ops += 1;
    if (s.high && (e < 0 || e > static_cast<int>(kExponentMask))) {
      throw CorruptError("reconstructed exponent out of range");
    }
    const auto [sign, mantissa] = unpack_sm(PackedSM{static_cast<std::uint8_t>(packed)});
    const BF16Word composed =
        make_bf16(sign, static_cast<unsigned>(e) & kExponentMask, mantissa);
    const std::uint16_t select = s.high ? 0xFFFFu : 0u;
    s.word = BF16Word{static_cast<std::uint16_t>((composed.bits & select) |
                                                 (fallback.bits & ~select))};
    ops += 5;
    s.exponent = s.high ? e : static_cast<int>(exponent_of(s.word));
  }
  steps[0].ops = steps[1].ops = ops;
  return steps;
}

std::pair<BF16Word, BF16Word> decode_lane(const FragmentInput &in, unsigned lane) {
  const auto steps = trace_lane(in, lane);
  return {steps[0].word, steps[1].word};
}

FragmentWords decode_fragment_warp(const FragmentInput &in, WarpStats *stats) {
  FragmentWords words{};
  WarpStats local;
  for (unsigned lane = 0; lane < kWarpLanes; ++lane) {
    const auto steps = trace_lane(in, lane);
    if (lane == 0) {
      local.ops_per_lane = steps[0].ops;
    } else if (steps[0].ops != local.ops_per_lane) {
      local.uniform = false;
    }
    for (const LaneStep &s : steps) {
      words[s.pos] = s.word;
      ++(s.high ? local.h_reads : local.l_reads);
    }
  }
  if (!local.uniform) {
    throw Error("warp lanes diverged in operation count");
  }
  if (stats != nullptr) {
    *stats = local;
  }
  return words;
}

std::vector<LaneStep> trace_fragment_warp(const FragmentInput &in) {
  std::vector<LaneStep> trace;
  trace.reserve(kFragElements);
  for (unsigned lane = 0; lane < kWarpLanes; ++lane) {
    const auto steps = trace_lane(in, lane);
    trace.insert(trace.end(), steps.begin(), steps.end());
  }
  return trace;
}

FragmentInput fragment_input(const CompressedMatrix &m, std::size_t block,
                             std::uint32_t block_fragment) {
  check_layout(m);
  if (block >= m.n_blocktiles() || block_fragment >= kFragsPerBlock) {
    throw RangeError("fragment_input: block or fragment index out of range");
  }
  const auto starts = m.fragment_starts(block);
  return FragmentInput{m.fragment(block * kFragsPerBlock + block_fragment),
                       m.h_segment(block),
                       m.l_segment(block),
                       starts[block_fragment].h,
                       starts[block_fragment].l,
                       m.header.base_exp};
}

WeightMatrix decompress_warp(const CompressedMatrix &m) {
  check_layout(m);
  WeightMatrix out(m.header.logical_rows, m.header.logical_cols);
  const std::uint32_t block_cols = m.block_cols();
  for (std::size_t b = 0; b < m.n_blocktiles(); ++b) {
    const auto starts = m.fragment_starts(b);
    FragmentInput in{{}, m.h_segment(b), m.l_segment(b), 0, 0, m.header.base_exp};
    for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
      in.code = m.fragment(b * kFragsPerBlock + f);
      in.h_start = starts[f].h;
      in.l_start = starts[f].l;
      scatter_fragment(out, static_cast<std::uint32_t>(b / block_cols),
                       static_cast<std::uint32_t>(b % block_cols), f,
                       decode_fragment_warp(in));
    }
  }
  return out;
}

std::optional<std::pair<std::uint32_t, std::uint32_t>>
first_difference(const WeightMatrix &a, const WeightMatrix &b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    return std::pair<std::uint32_t, std::uint32_t>{0, 0};
  }
  const auto [ia, ib] = std::mismatch(a.data.begin(), a.data.end(), b.data.begin());
  if (ia == a.data.end()) {
    return std::nullopt;
  }
  const auto index = static_cast<std::size_t>(ia - a.data.begin());
  return std::pair<std::uint32_t, std::uint32_t>{static_cast<std::uint32_t>(index / a.cols),
                                                 static_cast<std::uint32_t>(index % a.cols)};
}

RoundtripReport verify_roundtrip(const WeightMatrix &w, const CompressOptions &options) {
  RoundtripReport report;
  const CompressedMatrix cm = compress(w, options);
  const ExponentHistogram hist = compute_histogram(w.data);
  report.window = select_window(hist);
  report.window_coverage = window_coverage(hist, report.window);
  report.r3 = coverage_ratio_topk(hist, 3);
  report.ratio = compression_ratio(cm);
  report.bits_per_element = bits_per_element(cm);

  const auto bytes = serialize(cm);
  report.container_bytes = bytes.size();
  CompressedMatrix loaded;
  try {
    loaded = deserialize(bytes);
  } catch (const FormatError &) {
    report.stage = "deserialize";
    return report;
  }
  if (!(loaded == cm)) {
    report.stage = "serialize";
    return report;
  }
  const std::pair<const char *, WeightMatrix (*)(const CompressedMatrix &)> decoders[] = {
      {"reference-decode", &decompress_reference}, {"warp-decode", &decompress_warp}};
  for (const auto &[name, decode] : decoders) {
    try {
      if (auto diff = first_difference(decode(loaded), w)) {
        report.stage = name;
        report.first_mismatch = diff;
        return report;
      }
    } catch (const Error &) {
      report.stage = name;
      return report;
    }
  }
  report.ok = true;
  return report;
}

} // namespace ztbe
