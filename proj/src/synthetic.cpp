#include "ztbe/synthetic.hpp"

namespace ztbe {

WeightMatrix gaussian_matrix(std::uint32_t rows, std::uint32_t cols, double sigma,
                             std::mt19937_64 &rng) {
  std::normal_distribution<float> dist(0.0f, static_cast<float>(sigma));
  WeightMatrix w(rows, cols);
  for (BF16Word &word : w.data) {
    word = from_float(dist(rng));
  }
  return w;
}

BF16Word random_special(std::mt19937_64 &rng) {
  const auto r = static_cast<std::uint32_t>(rng());
  const unsigned sign = (r >> 8) & 1u;
  const unsigned payload = (r >> 9) & kMantissaMask;
  switch (r % 6) {
  case 0: // NaN, any non-zero payload
    return make_bf16(sign, kExponentMask, payload == 0 ? 1 : payload);
  case 1:
    return make_bf16(sign, kExponentMask, 0);
  case 2: // subnormal
    return make_bf16(sign, 0, payload == 0 ? 1 : payload);
  case 3:
    return make_bf16(sign, 0, 0);
  default:
    return BF16Word{static_cast<std::uint16_t>(r >> 16)};
  }
}

void inject_specials(WeightMatrix &w, double fraction, std::mt19937_64 &rng) {
  std::bernoulli_distribution pick(fraction);
  for (BF16Word &word : w.data) {
    if (pick(rng)) {
      word = random_special(rng);
    }
  }
}

} // namespace ztbe
