// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emofuse/tape.hpp"

namespace emofuse::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double scaleFloor = 1e-6;
  /// 0 checks every coordinate; otherwise this many coordinates per
  /// parameter, drawn with `samplingSeed`.
  std::size_t maxCoordsPerParameter = 0;
  std::uint64_t samplingSeed = 0;
  /// When positive, a coordinate whose relative error exceeds this is
  /// re-measured once with eps / 100 and keeps the smaller error. A stencil
  /// straddling a ReLU hinge or a median rank swap measures the mean of two
  /// one-sided slopes; the narrower stencil usually clears the hinge, while a
  /// wrong gradient rule fails at every width.
  double narrowAbove = 0.0;
};

struct ParameterError {
  std::string name;
  double maxRelError = 0.0;
  std::size_t worstIndex = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterError> perParameter;
  double maxRelError = 0.0;
  std::size_t coordinatesChecked = 0;
  /// Coordinates re-measured with the narrow stencil.
  std::size_t coordinatesNarrowed = 0;
};

/// Builds the scalar loss on the given tape from parameters it captures.
using LossBuilder = std::function<Var(Tape &)>;

/// Central-difference check of tape gradients for `params`. The builder is
/// run once for the analytic pass, once more to confirm it is deterministic,
/// then twice per checked coordinate. Throws ContractError for stochastic or
/// non-deterministic graphs.
GradCheckReport finiteDiffCheck(const LossBuilder &build,
                                const std::vector<Parameter *> &params,
                                const GradCheckOptions &options = {});

} // namespace emofuse::ad
