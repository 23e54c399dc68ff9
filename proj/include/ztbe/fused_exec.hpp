#pragma once

#include <cstdint>
#include <vector>

#include "ztbe/bf16.hpp"
#include "ztbe/codec.hpp"
#include "ztbe/format.hpp"

namespace ztbe {

// X in Y = W X, K x N, row-major.
struct ActivationMatrix {
  std::uint32_t k_dim = 0;
  std::uint32_t n_dim = 0;
  std::vector<BF16Word> data;

  ActivationMatrix() = default;
  ActivationMatrix(std::uint32_t k, std::uint32_t n, std::vector<BF16Word> d);
  ActivationMatrix(std::uint32_t k, std::uint32_t n, BF16Word fill = {});

  BF16Word at(std::uint32_t k, std::uint32_t n) const noexcept {
    return data[static_cast<std::size_t>(k) * n_dim + n];
  }
};

// FP32 accumulators, M x N, row-major. Never cast back to BF16.
struct OutputMatrix {
  std::uint32_t m_dim = 0;
  std::uint32_t n_dim = 0;
  std::vector<float> data;

  float at(std::uint32_t m, std::uint32_t n) const noexcept {
    return data[static_cast<std::size_t>(m) * n_dim + n];
  }
};

// Bitwise comparison (distinguishes -0.0 from +0.0 and NaN payloads).
bool bitwise_equal(const OutputMatrix &a, const OutputMatrix &b);

// Accumulation contract shared by every GEMM path: Y[i][j] starts at +0.0f and
// receives widen(W[i][k]) * widen(X[k][j]) for k = 0, 1, ..., K - 1 in order,
// one rounded product and one rounded add per term. Padded K columns are
// never accumulated.
OutputMatrix dense_gemm_ref(const WeightMatrix &w, const ActivationMatrix &x);

struct FusedStats {
  std::uint64_t fragments_decoded = 0;
  std::uint64_t peak_live_elements = 0; // decoded weights alive at once
  std::uint64_t compressed_bytes_read = 0;
};

struct FusedOptions {
  unsigned workers = 1; // 64-row bands decoded and accumulated independently
};

// Load-compressed, compute-decompressed: each FragTile is decoded by the warp
// simulator, consumed, and discarded. The full weight matrix never exists.
OutputMatrix fused_gemm(const CompressedMatrix &cm, const ActivationMatrix &x,
                        FusedStats *stats = nullptr, const FusedOptions &options = {});

struct DecoupledTraffic {
  std::uint64_t compressed_read = 0;     // payload bytes read by the decompressor
  std::uint64_t decompressed_write = 0;  // padded M * K * 2
  std::uint64_t decompressed_read = 0;   // padded M * K * 2, re-read by the GEMM
  std::uint64_t activation_read = 0;     // K * N * 2
  std::uint64_t output_write = 0;        // M * N * 2

  std::uint64_t weight_bytes() const noexcept {
    return compressed_read + decompressed_write + decompressed_read;
  }
};

struct DecoupledStats {
  DecoupledTraffic traffic;
  std::uint64_t decode_ops = 0;  // lane operations spent decompressing
  std::uint64_t gemm_flops = 0;  // 2 * M * N * K

  double decode_to_gemm_ratio() const noexcept {
    return gemm_flops == 0 ? 0.0
                           : static_cast<double>(decode_ops) / static_cast<double>(gemm_flops);
  }
};

// Decode-op count of one padded element, taken from the warp simulator.
unsigned decode_ops_per_element();

// Traffic and operation accounting of the decoupled path without running it.
DecoupledStats decoupled_accounting(const CompressedMatrix &cm, std::uint32_t n_tokens);

// Prefill path: full decompression, then dense_gemm_ref.
OutputMatrix decoupled_pipeline(const CompressedMatrix &cm, const ActivationMatrix &x,
                                DecoupledStats *stats = nullptr);

enum class ExecutionMode { Fused, Decoupled };

const char *to_string(ExecutionMode mode) noexcept;

struct StageDecision {
  std::uint32_t threshold_n = 128;
};

// Fused iff n_tokens <= threshold_n.
ExecutionMode stage_select(std::uint64_t n_tokens, const StageDecision &decision = {});

OutputMatrix stage_aware_gemm(const CompressedMatrix &cm, const ActivationMatrix &x,
                              const StageDecision &decision = {},
                              ExecutionMode *chosen = nullptr);

} // namespace ztbe
