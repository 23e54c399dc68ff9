#include "ztbe/format.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "ztbe/error.hpp"
#include "ztbe/exponent_analysis.hpp"

namespace ztbe {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'Z', 'T', 'B', 'E'};

void check_padded(PaddedDims dims) {
  if (dims.rows == 0 || dims.cols == 0 || dims.rows % kBlockDim != 0 ||
      dims.cols % kBlockDim != 0) {
    throw InvalidArgument("padded dims must be non-zero multiples of 64");
  }
}

class ByteWriter {
public:
  explicit ByteWriter(std::size_t reserve) { out_.reserve(reserve); }

  template <typename T> void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(u & 0xFFu));
      u = static_cast<U>(u >> 8);
    }
  }

  void put_bytes(std::span<const std::uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T> T get() {
    using U = std::make_unsigned_t<T>;
    require(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u = static_cast<U>(u | static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i)));
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError("container truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

[[noreturn]] void corrupt(const std::string &what) { throw CorruptError(what); }

} // namespace

TileCoordinates coords_of(std::uint32_t r, std::uint32_t c, PaddedDims dims) {
  check_padded(dims);
  if (r >= dims.rows || c >= dims.cols) {
    throw RangeError("coords_of: (" + std::to_string(r) + ", " + std::to_string(c) +
                     ") outside padded matrix");
  }
  const std::uint32_t rb = r % kBlockDim;
  const std::uint32_t cb = c % kBlockDim;
  const std::uint32_t rt = rb % kTensorCoreDim;
  const std::uint32_t ct = cb % kTensorCoreDim;
  TileCoordinates t;
  t.block_row = r / kBlockDim;
  t.block_col = c / kBlockDim;
  t.tct_index = (rb / kTensorCoreDim) * 4 + cb / kTensorCoreDim;
  t.frag_index = (ct / kFragDim) * 2 + rt / kFragDim;
  t.pos = (rt % kFragDim) * kFragDim + ct % kFragDim;
  return t;
}

std::pair<std::uint32_t, std::uint32_t> index_of(const TileCoordinates &t,
                                                 PaddedDims dims) {
  check_padded(dims);
  if (t.block_row >= dims.rows / kBlockDim || t.block_col >= dims.cols / kBlockDim ||
      t.tct_index >= kTensorCoreTilesPerBlock || t.frag_index >= kFragsPerTensorCoreTile ||
      t.pos >= kFragElements) {
    throw RangeError("index_of: tile coordinates out of range");
  }
  const auto [fr, fc] = fragment_origin(t.tct_index * kFragsPerTensorCoreTile + t.frag_index);
  return {t.block_row * kBlockDim + fr + t.pos / kFragDim,
          t.block_col * kBlockDim + fc + t.pos % kFragDim};
}

std::span<const std::uint8_t> CompressedMatrix::h_segment(std::size_t block) const {
  const std::size_t begin = offsets.at(block).h_start_bytes;
  const std::size_t end =
      block + 1 < offsets.size() ? offsets[block + 1].h_start_bytes : h.size();
  if (begin > end || end > h.size()) {
    throw CorruptError("H segment bounds out of range");
  }
  return std::span(h).subspan(begin, end - begin);
}

std::span<const BF16Word> CompressedMatrix::l_segment(std::size_t block) const {
  const std::size_t begin = offsets.at(block).l_start_bytes / 2;
  const std::size_t end =
      block + 1 < offsets.size() ? offsets[block + 1].l_start_bytes / 2 : l.size();
  if (begin > end || end > l.size()) {
    throw CorruptError("L segment bounds out of range");
  }
  return std::span(l).subspan(begin, end - begin);
}

std::array<FragmentStart, kFragsPerBlock>
CompressedMatrix::fragment_starts(std::size_t block) const {
  std::array<FragmentStart, kFragsPerBlock> starts{};
  const std::size_t first = block * kFragsPerBlock;
  std::uint32_t h_pos = 0;
  std::uint32_t l_pos = 0;
  for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
    starts[f] = {h_pos, l_pos};
    const unsigned ones = fragment(first + f).high_count();
    h_pos += ones;
    l_pos += kFragElements - ones;
  }
  return starts;
}

void validate(const CompressedMatrix &m) {
  const MatrixHeader &hd = m.header;
  if (hd.logical_rows == 0 || hd.logical_cols == 0) {
    corrupt("logical dims must be non-zero");
  }
  if (hd.padded_rows != round_up(hd.logical_rows, kBlockDim) ||
      hd.padded_cols != round_up(hd.logical_cols, kBlockDim) || hd.padded_rows == 0 ||
      hd.padded_cols == 0) {
    corrupt("padded dims are not the 64-aligned logical dims");
  }
  if (hd.base_exp < -1 || hd.base_exp > 248) {
    corrupt("base_exp " + std::to_string(hd.base_exp) + " outside [-1, 248]");
  }
  if (hd.pad_word != pad_word_for(hd.base_exp)) {
    corrupt("pad word does not match base_exp");
  }
  const std::size_t n_frag = m.n_fragtiles();
  if (m.b1.size() != n_frag || m.b2.size() != n_frag || m.b3.size() != n_frag) {
    corrupt("bit-plane length does not match FragTile count");
  }
  if (m.offsets.size() != m.n_blocktiles()) {
    corrupt("offset count does not match BlockTile count");
  }

  const ExponentWindow window{hd.base_exp, 0};
  std::uint64_t h_pos = 0;
  std::uint64_t l_pos = 0;
  for (std::size_t b = 0; b < m.n_blocktiles(); ++b) {
    const BlockOffset &off = m.offsets[b];
    if (off.h_start_bytes % kSegmentAlignment != 0 ||
        off.l_start_bytes % kSegmentAlignment != 0) {
      corrupt("BlockTile " + std::to_string(b) + " offset not 16-byte aligned");
    }
    if (off.h_start_bytes != h_pos || off.l_start_bytes != l_pos) {
      corrupt("BlockTile " + std::to_string(b) +
              " offset inconsistent with bit-plane popcounts");
    }
    std::uint64_t ones = 0;
    for (std::size_t f = b * kFragsPerBlock; f < (b + 1) * kFragsPerBlock; ++f) {
      ones += m.fragment(f).high_count();
    }
    const std::uint64_t zeros = std::uint64_t{kBlockElements} - ones;
    const std::uint64_t h_end = h_pos + align_segment(ones);
    const std::uint64_t l_end = l_pos + align_segment(zeros * 2);
    if (h_end > m.h.size() || l_end > m.l.size() * 2) {
      corrupt("BlockTile " + std::to_string(b) + " segment runs past buffer end");
    }
    for (std::uint64_t i = h_pos + ones; i < h_end; ++i) {
      if (m.h[i] != 0) {
        corrupt("non-zero H alignment padding in BlockTile " + std::to_string(b));
      }
    }
    const std::uint64_t l_first = l_pos / 2;
    for (std::uint64_t i = l_first; i < l_first + zeros; ++i) {
      if (window.contains(exponent_of(m.l[i]))) {
        corrupt("fallback word with in-window exponent in BlockTile " + std::to_string(b));
      }
    }
    for (std::uint64_t i = l_first + zeros; i < l_end / 2; ++i) {
      if (m.l[i].bits != 0) {
        corrupt("non-zero L alignment padding in BlockTile " + std::to_string(b));
      }
    }
    h_pos = h_end;
    l_pos = l_end;
  }
  if (h_pos != m.h.size() || l_pos != m.l.size() * 2) {
    corrupt("trailing data after the last BlockTile segment");
  }
}

std::uint64_t payload_bits(const CompressedMatrix &m) {
  return std::uint64_t{3} * 64 * m.n_fragtiles() + std::uint64_t{8} * m.h.size() +
         std::uint64_t{16} * m.l.size() + std::uint64_t{128} * m.offsets.size();
}

double compression_ratio(const CompressedMatrix &m) {
  const double logical = static_cast<double>(m.header.logical_rows) * m.header.logical_cols;
  return 16.0 * logical / static_cast<double>(payload_bits(m));
}

double bits_per_element(const CompressedMatrix &m) {
  const double logical = static_cast<double>(m.header.logical_rows) * m.header.logical_cols;
  return static_cast<double>(payload_bits(m)) / logical;
}

std::size_t container_size(const CompressedMatrix &m) {
  return kContainerHeaderBytes + 24 * m.n_fragtiles() + 16 * m.offsets.size() + m.h.size() +
         2 * m.l.size();
}

std::vector<std::uint8_t> serialize(const CompressedMatrix &m) {
  ByteWriter w(container_size(m));
  w.put_bytes(kMagic);
  w.put<std::uint16_t>(kContainerVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(m.header.logical_rows);
  w.put<std::uint32_t>(m.header.logical_cols);
  w.put<std::uint32_t>(m.header.padded_rows);
  w.put<std::uint32_t>(m.header.padded_cols);
  w.put<std::int16_t>(m.header.base_exp);
  w.put<std::uint16_t>(m.header.pad_word.bits);
  w.put<std::uint64_t>(m.b1.size());
  w.put<std::uint64_t>(m.h.size());
  w.put<std::uint64_t>(m.l.size());
  w.put<std::uint64_t>(m.offsets.size());
  for (const auto *plane : {&m.b1, &m.b2, &m.b3}) {
    for (const std::uint64_t word : *plane) {
      w.put(word);
    }
  }
  for (const BlockOffset &off : m.offsets) {
    w.put(off.h_start_bytes);
    w.put(off.l_start_bytes);
  }
  w.put_bytes(m.h);
  for (const BF16Word word : m.l) {
    w.put(word.bits);
  }
  return w.take();
}

CompressedMatrix deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.get_bytes(kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw BadMagicError("not a ZTBE container (bad magic)");
  }
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion) {
    throw VersionError("unsupported ZTBE version " + std::to_string(version));
  }
  const auto flags = r.get<std::uint16_t>();

  CompressedMatrix m;
  MatrixHeader &hd = m.header;
  hd.logical_rows = r.get<std::uint32_t>();
  hd.logical_cols = r.get<std::uint32_t>();
  hd.padded_rows = r.get<std::uint32_t>();
  hd.padded_cols = r.get<std::uint32_t>();
  hd.base_exp = r.get<std::int16_t>();
  hd.pad_word.bits = r.get<std::uint16_t>();
  const auto n_frag = r.get<std::uint64_t>();
  const auto h_len = r.get<std::uint64_t>();
  const auto l_len = r.get<std::uint64_t>();
  const auto n_block = r.get<std::uint64_t>();

  if (flags != 0) {
    corrupt("unknown container flags " + std::to_string(flags));
  }
  if (hd.padded_rows % kBlockDim != 0 || hd.padded_cols % kBlockDim != 0) {
    corrupt("padded dims are not multiples of 64");
  }
  if (n_frag != m.n_fragtiles() || n_block != m.n_blocktiles()) {
    corrupt("tile counts do not match padded dims");
  }
  using Wide = unsigned __int128;
  const Wide expected = Wide{kContainerHeaderBytes} + Wide{n_frag} * 24 + Wide{n_block} * 16 +
                        Wide{h_len} + Wide{l_len} * 2;
  if (expected > bytes.size()) {
    throw TruncatedError("container shorter than its declared payload");
  }
  if (expected < bytes.size()) {
    corrupt("trailing bytes after container payload");
  }

  for (auto *plane : {&m.b1, &m.b2, &m.b3}) {
    plane->resize(n_frag);
    for (auto &word : *plane) {
      word = r.get<std::uint64_t>();
    }
  }
  m.offsets.resize(n_block);
  for (BlockOffset &off : m.offsets) {
    off.h_start_bytes = r.get<std::uint64_t>();
    off.l_start_bytes = r.get<std::uint64_t>();
  }
  const auto h_bytes = r.get_bytes(h_len);
  m.h.assign(h_bytes.begin(), h_bytes.end());
  m.l.resize(l_len);
  for (BF16Word &word : m.l) {
    word.bits = r.get<std::uint16_t>();
  }
  validate(m);
  return m;
}

} // namespace ztbe
