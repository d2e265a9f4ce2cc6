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

#include "pdpl/rng.hpp"

#include <cmath>
#include <cstring>

namespace pdpl {

double SplitMix64::next_normal() {
  // Box-Muller; u1 pushed away from 0 so log stays finite.
  double u1 = next_uniform();
  double u2 = next_uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::uint64_t substream_seed(std::uint64_t seed, const char* tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = tag; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ULL;
  }
  return substream_seed(seed, h);
}

}  // namespace pdpl
