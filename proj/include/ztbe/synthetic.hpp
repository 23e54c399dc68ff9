#pragma once

#include <cstdint>
#include <random>

#include "ztbe/codec.hpp"

namespace ztbe {

// Entries drawn from N(0, sigma^2) in single precision, rounded to BF16.
WeightMatrix gaussian_matrix(std::uint32_t rows, std::uint32_t cols, double sigma,
                             std::mt19937_64 &rng);

// A BF16 special or arbitrary pattern: NaN with random payload, +-Inf,
// subnormal, +-0, or any of the 65536 patterns.
BF16Word random_special(std::mt19937_64 &rng);

// Replace each element with a special pattern with the given probability.
void inject_specials(WeightMatrix &w, double fraction, std::mt19937_64 &rng);

} // namespace ztbe
