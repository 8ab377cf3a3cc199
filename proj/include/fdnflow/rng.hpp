#pragma once

#include <cstdint>
#include <random>

namespace fdnflow {

// mt19937_64 has a fully specified sequence, so draws are reproducible
// across platforms without relying on distribution internals.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

}  // namespace fdnflow
