#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ztbe {

// Y (M x N) = W (M x K) X (K x N).
struct GemmShape {
  std::uint64_t m = 0;
  std::uint64_t n = 0;
  std::uint64_t k = 0;
};

// Original bytes / compressed bytes.
struct CompressionProfile {
  double cr = 1.0;
};

struct HardwareProfile {
  double peak_flops = 0.0;    // FLOP/s
  double mem_bandwidth = 0.0; // bytes/s

  double ridge_point() const noexcept { return peak_flops / mem_bandwidth; }
};

// Compute intensities in FLOP/byte, with BF16 = 2 bytes throughout.
//   gemm:      MNK / (MK + KN + MN)
//   decoupled: 2MNK / (MK (2/CR + 4) + 2 (KN + MN))
//   fused:     2MNK / (MK (2/CR) + 2 (KN + MN))
double ci_gemm(const GemmShape &s);
double ci_decoupled(const GemmShape &s, const CompressionProfile &p);
double ci_fused(const GemmShape &s, const CompressionProfile &p);

double roofline_attainable(double ci, const HardwareProfile &hw);

// attainable(ci_fused) / attainable(ci_gemm).
double predicted_speedup(const GemmShape &s, const CompressionProfile &p,
                         const HardwareProfile &hw);

struct DegradationRow {
  std::uint64_t n = 0;
  double ci_gemm = 0.0;
  double ci_decoupled = 0.0;
  double ci_fused = 0.0;
  double degradation_pct = 0.0; // 100 * (1 - decoupled / gemm)
  double fused_gain_pct = 0.0;  // 100 * (fused / gemm - 1)
  std::optional<double> speedup;
};

std::vector<DegradationRow> degradation_report(std::uint64_t m, std::uint64_t k,
                                               std::span<const std::uint64_t> n_values,
                                               const CompressionProfile &p,
                                               const std::optional<HardwareProfile> &hw = {});

// CSV with a header row; the speedup column appears only when rows carry one.
std::string to_csv(std::span<const DegradationRow> rows);

} // namespace ztbe
