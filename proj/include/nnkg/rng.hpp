#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "nnkg/error.hpp"

namespace nnkg {

// mt19937_64 wrapper with self-contained sampling helpers. std:: distributions
// are avoided on purpose: their output is implementation-defined and some keep
// internal state, which would break byte-identical reruns and checkpoint
// resume. Everything here derives from raw engine draws only, so the engine
// state is the whole RNG state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling to stay unbiased.
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw Error("bounded() needs a positive range");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform01()) * (hi - lo);
  }

  // Box-Muller without the usual cached spare, so no hidden state survives a
  // checkpoint boundary.
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * static_cast<float>(z);
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw DataError("malformed RNG state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nnkg
