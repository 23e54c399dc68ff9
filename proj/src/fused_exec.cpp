#include "ztbe/fused_exec.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <thread>

#include "ztbe/error.hpp"

namespace ztbe {

namespace {

std::vector<float> widen_activations(const ActivationMatrix &x) {
  if (x.data.size() != static_cast<std::size_t>(x.k_dim) * x.n_dim) {
    throw InvalidArgument("activation data length does not match dims");
  }
  std::vector<float> out(x.data.size());
  std::transform(x.data.begin(), x.data.end(), out.begin(), to_float);
  return out;
}

// Live decoded-weight counter with a high-water mark.
class WorkingSet {
public:
  void acquire(std::uint64_t n) {
    const std::uint64_t now = live_.fetch_add(n) + n;
    std::uint64_t peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
  }
  void release(std::uint64_t n) { live_.fetch_sub(n); }
  std::uint64_t peak() const { return peak_.load(); }

private:
  std::atomic<std::uint64_t> live_{0};
  std::atomic<std::uint64_t> peak_{0};
};

// The single accumulation kernel of every GEMM path. NaN payload propagation
// depends on the operand order of the emitted add, so all paths must execute
// this exact instruction sequence.
[[gnu::noinline]] void accumulate_row(float *y, float w, const float *x, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = y[j] + w * x[j];
  }
}

} // namespace

ActivationMatrix::ActivationMatrix(std::uint32_t k, std::uint32_t n, std::vector<BF16Word> d)
    : k_dim(k), n_dim(n), data(std::move(d)) {
  if (data.size() != static_cast<std::size_t>(k) * n) {
    throw InvalidArgument("ActivationMatrix: data length does not match dims");
  }
}

ActivationMatrix::ActivationMatrix(std::uint32_t k, std::uint32_t n, BF16Word fill)
    : k_dim(k), n_dim(n), data(static_cast<std::size_t>(k) * n, fill) {}

bool bitwise_equal(const OutputMatrix &a, const OutputMatrix &b) {
  return a.m_dim == b.m_dim && a.n_dim == b.n_dim && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

OutputMatrix dense_gemm_ref(const WeightMatrix &w, const ActivationMatrix &x) {
  if (w.cols != x.k_dim) {
    throw InvalidArgument("dense_gemm_ref: W has " + std::to_string(w.cols) +
                          " columns but X has " + std::to_string(x.k_dim) + " rows");
  }
  const std::vector<float> xf = widen_activations(x);
  OutputMatrix y{w.rows, x.n_dim, std::vector<float>(std::size_t{w.rows} * x.n_dim, 0.0f)};
  const std::size_t n = x.n_dim;
  for (std::uint32_t i = 0; i < w.rows; ++i) {
    float *yrow = y.data.data() + i * n;
    for (std::uint32_t k = 0; k < w.cols; ++k) {
      accumulate_row(yrow, to_float(w.at(i, k)), xf.data() + k * n, n);
    }
  }
  return y;
}

OutputMatrix fused_gemm(const CompressedMatrix &cm, const ActivationMatrix &x,
                        FusedStats *stats, const FusedOptions &options) {
  const std::uint32_t m_dim = cm.header.logical_rows;
  const std::uint32_t k_dim = cm.header.logical_cols;
  if (k_dim != x.k_dim) {
    throw InvalidArgument("fused_gemm: W has " + std::to_string(k_dim) +
                          " columns but X has " + std::to_string(x.k_dim) + " rows");
  }
  if (cm.n_fragtiles() == 0 || cm.b1.size() != cm.n_fragtiles() ||
      cm.offsets.size() != cm.n_blocktiles()) {
    throw CorruptError("fused_gemm: compressed layout inconsistent with header");
  }
  const std::vector<float> xf = widen_activations(x);
  OutputMatrix y{m_dim, x.n_dim, std::vector<float>(std::size_t{m_dim} * x.n_dim, 0.0f)};
  const std::size_t n = x.n_dim;
  const std::uint32_t block_cols = cm.block_cols();

  WorkingSet working_set;
  std::atomic<std::uint64_t> fragments{0};
  std::atomic<std::uint64_t> bytes_read{0};

  // One 64-row band: BlockTiles left to right, fragments in canonical order.
  // For any output row this visits K in ascending order.
  auto run_band = [&](std::uint32_t band) {
    std::uint64_t band_bytes = 0;
    for (std::uint32_t bc = 0; bc < block_cols; ++bc) {
      const std::size_t b = std::size_t{band} * block_cols + bc;
      const auto starts = cm.fragment_starts(b);
      FragmentInput in{{}, cm.h_segment(b), cm.l_segment(b), 0, 0, cm.header.base_exp};
      band_bytes += sizeof(BlockOffset);
      for (std::uint32_t f = 0; f < kFragsPerBlock; ++f) {
        in.code = cm.fragment(b * kFragsPerBlock + f);
        in.h_start = starts[f].h;
        in.l_start = starts[f].l;
        WarpStats ws;
        working_set.acquire(kFragElements);
        const FragmentWords words = decode_fragment_warp(in, &ws);
        band_bytes += 3 * sizeof(std::uint64_t) + ws.h_reads + 2 * ws.l_reads;

        const auto [fr, fc] = fragment_origin(f);
        const std::uint32_t row0 = band * kBlockDim + fr;
        const std::uint32_t col0 = bc * kBlockDim + fc;
        for (unsigned pos = 0; pos < kFragElements; ++pos) {
          const std::uint32_t r = row0 + pos / kFragDim;
          const std::uint32_t c = col0 + pos % kFragDim;
          if (r >= m_dim || c >= k_dim) {
            continue;
          }
          accumulate_row(y.data.data() + r * n, to_float(words[pos]), xf.data() + c * n, n);
        }
        working_set.release(kFragElements);
        fragments.fetch_add(1, std::memory_order_relaxed);
      }
    }
    bytes_read.fetch_add(band_bytes, std::memory_order_relaxed);
  };

  const std::uint32_t bands = cm.block_rows();
  const unsigned workers = std::clamp<unsigned>(options.workers, 1, bands);
  if (workers == 1) {
    for (std::uint32_t band = 0; band < bands; ++band) {
      run_band(band);
    }
  } else {
    std::atomic<std::uint32_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::uint32_t band = next++; band < bands; band = next++) {
          run_band(band);
        }
      });
    }
  }

  if (stats != nullptr) {
    stats->fragments_decoded = fragments.load();
    stats->peak_live_elements = working_set.peak();
    stats->compressed_bytes_read = bytes_read.load();
  }
  return y;
}

unsigned decode_ops_per_element() {
  static const unsigned ops = [] {
    const std::vector<BF16Word> fallback(kFragElements);
    const FragmentInput in{FragTileCode{}, {}, fallback, 0, 0, 0};
    return trace_lane(in, 0)[0].ops / 2;
  }();
  return ops;
}

DecoupledStats decoupled_accounting(const CompressedMatrix &cm, std::uint32_t n_tokens) {
  const std::uint64_t padded = std::uint64_t{cm.header.padded_rows} * cm.header.padded_cols;
  const std::uint64_t m = cm.header.logical_rows;
  const std::uint64_t k = cm.header.logical_cols;
  DecoupledStats s;
  s.traffic.compressed_read = payload_bits(cm) / 8;
  s.traffic.decompressed_write = padded * 2;
  s.traffic.decompressed_read = padded * 2;
  s.traffic.activation_read = k * n_tokens * 2;
  s.traffic.output_write = m * n_tokens * 2;
  s.decode_ops = padded * decode_ops_per_element();
  s.gemm_flops = 2 * m * n_tokens * k;
  return s;
}

OutputMatrix decoupled_pipeline(const CompressedMatrix &cm, const ActivationMatrix &x,
                                DecoupledStats *stats) {
  if (cm.header.logical_cols != x.k_dim) {
    throw InvalidArgument("decoupled_pipeline: shape mismatch");
  }
  OutputMatrix y = dense_gemm_ref(decompress_reference(cm), x);
  if (stats != nullptr) {
    *stats = decoupled_accounting(cm, x.n_dim);
  }
  return y;
}

const char *to_string(ExecutionMode mode) noexcept {
  return mode == ExecutionMode::Fused ? "fused" : "decoupled";
}

ExecutionMode stage_select(std::uint64_t n_tokens, const StageDecision &decision) {
  if (decision.threshold_n == 0) {
    throw InvalidArgument("stage_select: threshold must be positive");
  }
  return n_tokens <= decision.threshold_n ? ExecutionMode::Fused : ExecutionMode::Decoupled;
}

OutputMatrix stage_aware_gemm(const CompressedMatrix &cm, const ActivationMatrix &x,
                              const StageDecision &decision, ExecutionMode *chosen) {
  const ExecutionMode mode = stage_select(x.n_dim, decision);
  if (chosen != nullptr) {
    *chosen = mode;
  }
  return mode == ExecutionMode::Fused ? fused_gemm(cm, x) : decoupled_pipeline(cm, x);
}

} // namespace ztbe
