#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ztbe/error.hpp"
#include "ztbe/perf_model.hpp"

using namespace ztbe;

namespace {

// Exact rational evaluations at M = K = 4096, CR = 1.51.
struct Reference {
  std::uint64_t n;
  double gemm, decoupled, fused, degradation;
};
constexpr Reference kReference[] = {
    {8, 7.968871595330739, 3.00057246538525, 12.009164692633297, 62.346331855272986},
    {16, 15.875968992248062, 5.99236537678997, 23.878310555169485, 62.25512042939911},
    {32, 31.50769230769231, 11.949766219714826, 47.20622805678522, 62.073495884694154},
    {64, 62.06060606060606, 23.760891279293123, 92.28528797373919, 61.71340760660776},
};

} // namespace

TEST(ComputeIntensity, ReferenceValues) {
  for (const auto &r : kReference) {
    const GemmShape s{4096, r.n, 4096};
    EXPECT_NEAR(ci_gemm(s), r.gemm, 1e-12);
    EXPECT_NEAR(ci_decoupled(s, {1.51}), r.decoupled, 1e-12);
    EXPECT_NEAR(ci_fused(s, {1.51}), r.fused, 1e-12);
  }
  EXPECT_DOUBLE_EQ(ci_gemm({1, 1, 1}), 1.0 / 3.0);
}

TEST(ComputeIntensity, Limits) {
  const GemmShape s{4096, 8, 4096};
  EXPECT_DOUBLE_EQ(ci_fused(s, {1.0}), ci_gemm(s));
  const double m = 4096, n = 8, k = 4096;
  const double limit = m * n * k / (2 * m * k + k * n + m * n);
  EXPECT_NEAR(ci_decoupled(s, {1e12}), limit, 1e-9);
  EXPECT_LT(limit, ci_gemm(s));
  EXPECT_THROW(ci_gemm({0, 1, 1}), InvalidArgument);
  EXPECT_THROW(ci_fused(s, {0.0}), InvalidArgument);
}

TEST(Degradation, PublishedPercentages) {
  const std::vector<std::uint64_t> n{8, 16, 32, 64};
  const auto rows = degradation_report(4096, 4096, n, {1.51});
  ASSERT_EQ(rows.size(), 4u);
  const double published[] = {62.3, 62.2, 62.0, 61.7};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_NEAR(rows[i].degradation_pct, kReference[i].degradation, 1e-9);
    EXPECT_NEAR(rows[i].degradation_pct, published[i], 0.1);
    EXPECT_NEAR(rows[i].fused_gain_pct, 100 * (kReference[i].fused / kReference[i].gemm - 1),
                1e-9);
    EXPECT_FALSE(rows[i].speedup.has_value());
  }
}

TEST(Roofline, Attainable) {
  const HardwareProfile hw{100.0, 10.0};
  EXPECT_DOUBLE_EQ(hw.ridge_point(), 10.0);
  EXPECT_DOUBLE_EQ(roofline_attainable(2.0, hw), 20.0);
  EXPECT_DOUBLE_EQ(roofline_attainable(50.0, hw), 100.0);
  EXPECT_THROW(roofline_attainable(1.0, {0.0, 1.0}), InvalidArgument);
}

TEST(Roofline, SpeedupTendsToCompressionRatio) {
  const HardwareProfile hw{1e15, 1e12};
  double previous_gap = INFINITY;
  for (const std::uint64_t n : {64u, 16u, 4u, 1u}) {
    const double gap = 1.51 - predicted_speedup({4096, n, 4096}, {1.51}, hw);
    EXPECT_GT(gap, 0.0);
    EXPECT_LT(gap, previous_gap);
    previous_gap = gap;
  }
  // Closed form of the memory-bound ratio at N = 1.
  const double m = 1 << 20, k = 1 << 20;
  const double exact = 2 * (m * k + k + m) / (m * k * 2 / 1.51 + 2 * (k + m));
  EXPECT_NEAR(predicted_speedup({1 << 20, 1, 1 << 20}, {1.51}, hw), exact, 1e-12);
  EXPECT_NEAR(exact, 1.51, 1e-5);
}

TEST(Roofline, ComputeBoundPlateau) {
  const HardwareProfile hw{1e3, 1e3};
  EXPECT_DOUBLE_EQ(predicted_speedup({4096, 4096, 4096}, {1.51}, hw), 1.0);
}

TEST(Roofline, MemoryBoundSpeedupIsIntensityRatio) {
  const HardwareProfile hw{1e18, 1e9};
  const GemmShape s{4096, 32, 4096};
  EXPECT_NEAR(predicted_speedup(s, {1.51}, hw), ci_fused(s, {1.51}) / ci_gemm(s), 1e-12);
}

TEST(Roofline, SpeedupNeverExceedsCompressionRatio) {
  const HardwareProfile hw{1e14, 1e12};
  for (double cr : {1.0, 1.2, 1.51, 3.0}) {
    for (const std::uint64_t n : {1u, 8u, 100u, 1000u, 100000u}) {
      const double s = predicted_speedup({2048, n, 8192}, {cr}, hw);
      EXPECT_LE(s, cr + 1e-12);
      EXPECT_GE(s, 1.0 - 1e-12);
    }
  }
}

TEST(Report, Csv) {
  const std::vector<std::uint64_t> n{8};
  const auto plain = to_csv(degradation_report(4096, 4096, n, {1.51}));
  EXPECT_EQ(plain.substr(0, plain.find('\n')),
            "N,ci_gemm,ci_decoupled,ci_fused,degradation_pct,fused_gain_pct");
  EXPECT_NE(plain.find("8,7.968871595,"), std::string::npos);
  const auto with_hw =
      to_csv(degradation_report(4096, 4096, n, {1.51}, HardwareProfile{1e14, 1e12}));
  EXPECT_NE(with_hw.find(",predicted_speedup\n"), std::string::npos);
}
