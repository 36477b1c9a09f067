// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "emofuse/tensor.hpp"

namespace emofuse::testing {

inline Tensor randomTensor(Shape shape, std::mt19937_64 &rng, double lo = -2.0,
                           double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double &v : t.values())
    v = dist(rng);
  return t;
}

/// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratchDir(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() / ("emofuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace emofuse::testing
