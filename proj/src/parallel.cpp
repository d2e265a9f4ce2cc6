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

#include "pdpl/parallel.hpp"

#include <atomic>

namespace pdpl::par {

namespace {
std::atomic<bool> g_serial_only{false};
}

void set_serial_override(bool serial_only) { g_serial_only.store(serial_only); }

bool parallel_enabled() {
#ifdef _OPENMP
  return !g_serial_only.load();
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

}  // namespace pdpl::par
