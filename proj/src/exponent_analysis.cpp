#include "ztbe/exponent_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ztbe/error.hpp"

namespace ztbe {

namespace {

constexpr double kEqualTolerance = 1e-12;

// Indices sorted by value descending, ties toward the smaller index.
std::vector<std::size_t> rank_descending(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

bool is_contiguous(std::span<const std::size_t> indices) {
  const auto [lo, hi] = std::minmax_element(indices.begin(), indices.end());
  return *hi - *lo + 1 == indices.size();
}

} // namespace

ExponentHistogram compute_histogram(std::span<const BF16Word> weights) {
  ExponentHistogram h;
  for (const BF16Word w : weights) {
    ++h.counts[exponent_of(w)];
  }
  h.total = weights.size();
  return h;
}

ExponentWindow select_window(const ExponentHistogram &h) {
  if (h.total == 0) {
    throw InvalidArgument("select_window: empty histogram");
  }
  constexpr int kWidth = ExponentWindow::kWidth;
  std::uint64_t sum = 0;
  for (int e = 0; e < kWidth; ++e) {
    sum += h.counts[e];
  }
  int best_start = 0;
  std::uint64_t best = sum;
  for (int start = 1; start + kWidth <= static_cast<int>(kExponentCount); ++start) {
    sum += h.counts[start + kWidth - 1];
    sum -= h.counts[start - 1];
    if (sum > best) {
      best = sum;
      best_start = start;
    }
  }
  return ExponentWindow{best_start - 1, best};
}

double window_coverage(const ExponentHistogram &h, const ExponentWindow &w) {
  if (h.total == 0) {
    throw InvalidArgument("window_coverage: empty histogram");
  }
  std::uint64_t covered = 0;
  for (int e = std::max(w.first(), 0); e <= std::min(w.last(), 255); ++e) {
    covered += h.counts[e];
  }
  return static_cast<double>(covered) / static_cast<double>(h.total);
}

double coverage_ratio_topk(const ExponentHistogram &h, int n) {
  if (n < 1 || n > 8) {
    throw InvalidArgument("coverage_ratio_topk: codeword bits must be in [1, 8]");
  }
  if (h.total == 0) {
    throw InvalidArgument("coverage_ratio_topk: empty histogram");
  }
  auto sorted = h.counts;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t slots = (std::size_t{1} << n) - 1;
  const std::uint64_t covered =
      std::accumulate(sorted.begin(), sorted.begin() + slots, std::uint64_t{0});
  return static_cast<double>(covered) / static_cast<double>(h.total);
}

double shannon_entropy(const ExponentHistogram &h) {
  if (h.total == 0) {
    return 0.0;
  }
  const double total = static_cast<double>(h.total);
  double entropy = 0.0;
  for (const std::uint64_t c : h.counts) {
    if (c != 0) {
      const double p = static_cast<double>(c) / total;
      entropy -= p * std::log2(p);
    }
  }
  return std::max(entropy, 0.0);
}

double average_bits(int n, double r) {
  if (n < 1) {
    throw InvalidArgument("average_bits: codeword bits must be >= 1");
  }
  if (!(r >= 0.0 && r <= 1.0)) {
    throw InvalidArgument("average_bits: coverage must be in [0, 1]");
  }
  return r * (n + 8) + (1.0 - r) * (n + 16);
}

double coverage_for_average_bits(int n, double bits) {
  if (n < 1) {
    throw InvalidArgument("coverage_for_average_bits: codeword bits must be >= 1");
  }
  return (n + 16 - bits) / 8.0;
}

GaussianExponentModel::GaussianExponentModel(double sigma) : sigma_(sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("GaussianExponentModel: sigma must be positive and finite");
  }
}

double gaussian_pmf(const GaussianExponentModel &model, int x) {
  const double scale = model.sigma() * std::sqrt(2.0);
  const double lo = std::ldexp(1.0, x) / scale;
  const double hi = 2.0 * lo;
  // Past erf(1) the complement keeps the small difference from cancelling.
  if (lo > 1.0) {
    return std::erfc(lo) - std::erfc(hi);
  }
  return std::erf(hi) - std::erf(lo);
}

std::vector<double> gaussian_pmf_range(const GaussianExponentModel &model, int lo,
                                       int hi) {
  if (hi < lo) {
    throw InvalidArgument("gaussian_pmf_range: empty range");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (int x = lo; x <= hi; ++x) {
    out.push_back(gaussian_pmf(model, x));
  }
  return out;
}

double gaussian_critical_u0() { return std::sqrt(std::log(2.0) / 3.0); }

double gaussian_critical_x(const GaussianExponentModel &model) {
  return std::log2(model.sigma() * std::sqrt(2.0) * gaussian_critical_u0());
}

int gaussian_mode(const GaussianExponentModel &model) {
  const double x = gaussian_critical_x(model);
  const int below = static_cast<int>(std::floor(x));
  const int above = static_cast<int>(std::ceil(x));
  return gaussian_pmf(model, above) > gaussian_pmf(model, below) ? above : below;
}

UnimodalResult check_unimodal(std::span<const double> values) {
  if (values.empty()) {
    throw InvalidArgument("check_unimodal: empty sequence");
  }
  UnimodalResult result{true, 0};
  bool falling = false;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double diff = values[i] - values[i - 1];
    if (diff > kEqualTolerance) {
      if (falling) {
        result.unimodal = false;
      }
    } else if (diff < -kEqualTolerance) {
      falling = true;
    }
    if (values[i] > values[result.mode_index]) {
      result.mode_index = i;
    }
  }
  return result;
}

bool top_k_contiguous(std::span<const double> values, std::size_t k) {
  if (k == 0 || k > values.size()) {
    throw InvalidArgument("top_k_contiguous: k must be in [1, size]");
  }
  const auto order = rank_descending(values);
  return is_contiguous(std::span(order).first(k));
}

bool top_k_contiguous(const ExponentHistogram &h, std::size_t k) {
  if (k == 0 || k > kExponentCount) {
    throw InvalidArgument("top_k_contiguous: k must be in [1, 256]");
  }
  std::vector<double> values(h.counts.begin(), h.counts.end());
  const auto order = rank_descending(values);
  std::size_t nonzero = 0;
  while (nonzero < k && h.counts[order[nonzero]] != 0) {
    ++nonzero;
  }
  if (nonzero == 0) {
    return true;
  }
  return is_contiguous(std::span(order).first(nonzero));
}

} // namespace ztbe
