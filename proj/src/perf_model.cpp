#include "ztbe/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ztbe/error.hpp"

namespace ztbe {

namespace {

struct Dims {
  double m, n, k;
};

Dims checked(const GemmShape &s) {
  if (s.m == 0 || s.n == 0 || s.k == 0) {
    throw InvalidArgument("GemmShape dimensions must be positive");
  }
  return {static_cast<double>(s.m), static_cast<double>(s.n), static_cast<double>(s.k)};
}

double checked_cr(const CompressionProfile &p) {
  if (!(p.cr > 0.0)) {
    throw InvalidArgument("compression ratio must be positive");
  }
  return p.cr;
}

} // namespace

double ci_gemm(const GemmShape &s) {
  const auto [m, n, k] = checked(s);
  return m * n * k / (m * k + k * n + m * n);
}

double ci_decoupled(const GemmShape &s, const CompressionProfile &p) {
  const auto [m, n, k] = checked(s);
  const double cr = checked_cr(p);
  return 2.0 * m * n * k / (m * k * (2.0 / cr + 4.0) + 2.0 * (k * n + m * n));
}

double ci_fused(const GemmShape &s, const CompressionProfile &p) {
  const auto [m, n, k] = checked(s);
  const double cr = checked_cr(p);
  return 2.0 * m * n * k / (m * k * (2.0 / cr) + 2.0 * (k * n + m * n));
}

double roofline_attainable(double ci, const HardwareProfile &hw) {
  if (!(hw.peak_flops > 0.0) || !(hw.mem_bandwidth > 0.0)) {
    throw InvalidArgument("hardware profile needs positive peak and bandwidth");
  }
  return std::min(hw.peak_flops, ci * hw.mem_bandwidth);
}

double predicted_speedup(const GemmShape &s, const CompressionProfile &p,
                         const HardwareProfile &hw) {
  return roofline_attainable(ci_fused(s, p), hw) / roofline_attainable(ci_gemm(s), hw);
}

std::vector<DegradationRow> degradation_report(std::uint64_t m, std::uint64_t k,
                                               std::span<const std::uint64_t> n_values,
                                               const CompressionProfile &p,
                                               const std::optional<HardwareProfile> &hw) {
  std::vector<DegradationRow> rows;
  rows.reserve(n_values.size());
  for (const std::uint64_t n : n_values) {
    const GemmShape s{m, n, k};
    DegradationRow row;
    row.n = n;
    row.ci_gemm = ci_gemm(s);
    row.ci_decoupled = ci_decoupled(s, p);
    row.ci_fused = ci_fused(s, p);
    row.degradation_pct = 100.0 * (1.0 - row.ci_decoupled / row.ci_gemm);
    row.fused_gain_pct = 100.0 * (row.ci_fused / row.ci_gemm - 1.0);
    if (hw) {
      row.speedup = predicted_speedup(s, p, *hw);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string to_csv(std::span<const DegradationRow> rows) {
  const bool with_speedup =
      std::any_of(rows.begin(), rows.end(), [](const auto &r) { return r.speedup.has_value(); });
  std::ostringstream out;
  out.precision(10);
  out << "N,ci_gemm,ci_decoupled,ci_fused,degradation_pct,fused_gain_pct";
  if (with_speedup) {
    out << ",predicted_speedup";
  }
  out << '\n';
  for (const DegradationRow &r : rows) {
    out << r.n << ',' << r.ci_gemm << ',' << r.ci_decoupled << ',' << r.ci_fused << ','
        << r.degradation_pct << ',' << r.fused_gain_pct;
    if (with_speedup) {
      out << ',' << r.speedup.value_or(std::nan(""));
    }
    out << '\n';
  }
  return out.str();
}

} // namespace ztbe
