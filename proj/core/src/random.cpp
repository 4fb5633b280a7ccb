#include "seufi/random.hpp"

#include <cmath>
#include <numbers>

namespace seufi {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double sigma, double limit) {
  for (;;) {
    const double z = normal();
    if (std::abs(z) <= limit) return z * sigma;
  }
}

}  // namespace seufi
