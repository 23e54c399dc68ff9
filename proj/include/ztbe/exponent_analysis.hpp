#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ztbe/bf16.hpp"

namespace ztbe {

struct ExponentHistogram {
  std::array<std::uint64_t, kExponentCount> counts{};
  std::uint64_t total = 0;

  bool operator==(const ExponentHistogram &) const = default;
};

// Seven consecutive exponent values [base_exp + 1, base_exp + 7].
struct ExponentWindow {
  static constexpr int kWidth = 7;

  int base_exp = 0;
  std::uint64_t covered = 0;

  constexpr int first() const noexcept { return base_exp + 1; }
  constexpr int last() const noexcept { return base_exp + kWidth; }
  constexpr bool contains(unsigned exponent) const noexcept {
    const int e = static_cast<int>(exponent);
    return e >= first() && e <= last();
  }

  bool operator==(const ExponentWindow &) const = default;
};

ExponentHistogram compute_histogram(std::span<const BF16Word> weights);

// Window of 7 consecutive exponents with the largest total count. Ties go to
// the smallest starting exponent. Throws InvalidArgument on an empty histogram.
ExponentWindow select_window(const ExponentHistogram &h);

// Fraction of elements inside the window, recounted from the histogram.
double window_coverage(const ExponentHistogram &h, const ExponentWindow &w);

// r_n: fraction of elements held by the 2^n - 1 most frequent exponents,
// contiguous or not. n must lie in [1, 8].
double coverage_ratio_topk(const ExponentHistogram &h, int n);

// Shannon entropy of the exponent field in bits per symbol (0 for empty).
double shannon_entropy(const ExponentHistogram &h);

// Expected bits per element for an n-bit codeword covering a fraction r:
//   r * (n + 8) + (1 - r) * (n + 16)
double average_bits(int n, double r);

// Inverse of average_bits in r.
double coverage_for_average_bits(int n, double bits);

// Exponent distribution of zero-mean Gaussian weights w ~ N(0, sigma^2).
// The exponent value x = E - 127 of |w| has pmf
//   erf(2^(x+1) / (sigma*sqrt2)) - erf(2^x / (sigma*sqrt2)),
// ignoring mantissa rounding.
class GaussianExponentModel {
public:
  explicit GaussianExponentModel(double sigma);

  double sigma() const noexcept { return sigma_; }

private:
  double sigma_;
};

double gaussian_pmf(const GaussianExponentModel &model, int x);

// pmf evaluated over the closed integer range [lo, hi].
std::vector<double> gaussian_pmf_range(const GaussianExponentModel &model,
                                       int lo, int hi);

// Critical point of erf(2u) - erf(u): u0 = sqrt(ln 2 / 3).
double gaussian_critical_u0();

// Continuous maximiser x* of the pmf, from 2^x* = sigma * sqrt2 * u0.
double gaussian_critical_x(const GaussianExponentModel &model);

// Integer mode: the better of floor(x*) and ceil(x*) (smaller x on a tie).
int gaussian_mode(const GaussianExponentModel &model);

struct UnimodalResult {
  bool unimodal = false;
  std::size_t mode_index = 0;
};

// Non-decreasing up to a peak, then non-increasing. Differences within 1e-12
// count as equal, so flat runs are tolerated. mode_index is the first maximum.
UnimodalResult check_unimodal(std::span<const double> values);

// Whether the k largest values (ties toward the smaller index) occupy a
// contiguous index run. Requires 1 <= k <= values.size().
bool top_k_contiguous(std::span<const double> values, std::size_t k);

// Histogram form. Only exponents with a non-zero count take part, so a matrix
// with fewer than k distinct exponents is judged on the ones it has.
bool top_k_contiguous(const ExponentHistogram &h, std::size_t k);

} // namespace ztbe
