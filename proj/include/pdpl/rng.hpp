/*
 Copyright 2026 The pdpl authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef PDPL_RNG_HPP_
#define PDPL_RNG_HPP_

#include <cstdint>

namespace pdpl {

// splitmix64: used both as a small fast generator and to derive independent
// substreams from (seed, index) pairs so that sample i is the same no matter
// how work is split across threads.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1). 53-bit mantissa mapping, identical on all platforms.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  /// Standard normal via Box-Muller on two fixed draws (deterministic,
  /// no rejection loop).
  double next_normal();
};

/// Substream seed for element `index` of the stream rooted at `seed`.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 mix(seed ^ (0x632be59bd9b4e019ULL + index * 0x9e3779b97f4a7c15ULL));
  mix.next_u64();
  return mix.next_u64();
}

/// Named substream (e.g. separating primal/dual dataset draws).
std::uint64_t substream_seed(std::uint64_t seed, const char* tag);

}  // namespace pdpl

#endif  // PDPL_RNG_HPP_
