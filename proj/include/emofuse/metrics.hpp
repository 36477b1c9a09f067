// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>

#include "emofuse/predlog.hpp"

namespace emofuse::eval {

using seq::kNumClasses;

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0; // 0 when precision + recall == 0
  std::size_t support = 0;
};

struct MetricsReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macroF1 = 0.0;
  /// rows = true class, columns = predicted class
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  std::array<ClassScores, kNumClasses> perClass{};
};

/// Every record must carry a label; the input must be nonempty.
MetricsReport computeMetrics(std::span<const PredictionRecord> records);

std::string formatMetrics(const MetricsReport &report);

} // namespace emofuse::eval
