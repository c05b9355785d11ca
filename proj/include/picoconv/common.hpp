/*
 * Copyright (c) 2026 The picoconv authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PICOCONV_COMMON_HPP
#define PICOCONV_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace picoconv {

namespace detail {
inline void strf_cat(std::ostringstream &) {}
template <class T, class... Rest> void strf_cat(std::ostringstream &os, const T &v, const Rest &...rest) {
  os << v;
  strf_cat(os, rest...);
}
} // namespace detail

// Builds "a" << "b" << ... into one string; used for error messages.
template <class... Args> std::string strf(const Args &...args) {
  std::ostringstream os;
  detail::strf_cat(os, args...);
  return os.str();
}

template <class... Args> [[noreturn]] void fail(const Args &...args) {
  throw std::runtime_error(strf(args...));
}

template <class... Args> void require(bool cond, const Args &...args) {
  if (!cond) fail(args...);
}

// Deterministic RNG used everywhere randomness is needed. The Gaussian
// variate is hand-rolled (Box-Muller) because std::normal_distribution is
// implementation-defined and would break byte-identical file generation.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64: portable, valid for every seed including 0
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; two uniforms consumed per call
  double gaussian() {
    double u1 = 1.0 - uniform(); // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

private:
  uint64_t state_;
};

} // namespace picoconv

#endif // PICOCONV_COMMON_HPP
