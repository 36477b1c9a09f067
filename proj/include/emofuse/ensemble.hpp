// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emofuse/predlog.hpp"

namespace emofuse::fusion {

using eval::Logits;
using eval::PredictionRecord;
using seq::kNumClasses;

/// Prediction logs of several models over one common video set.
struct LogTable {
  std::vector<std::string> models;
  std::vector<std::string> videoIds; // first model's order
  /// records[m][v] belongs to videoIds[v]
  std::vector<std::vector<PredictionRecord>> records;
  /// Fraction correct per model; unset when any video lacks a label.
  std::vector<std::optional<double>> accuracy;

  std::size_t modelCount() const { return models.size(); }
  std::size_t videoCount() const { return videoIds.size(); }
  /// Label of video v; unset for unlabelled splits.
  std::optional<int> label(std::size_t v) const;
};

/// Requires every model to cover the same video ids (CoverageError listing
/// the offenders) and to agree on each video's label.
LogTable buildLogTable(
    std::vector<std::pair<std::string, std::vector<PredictionRecord>>> logs);
LogTable loadLogs(std::span<const std::string> paths);

/// Per-model accuracies; ContractError if any is unavailable.
std::vector<double> accuracyWeights(const LogTable &table);

/// w_c = N / (7 N_c), rescaled so the weights sum to 7.
using ClassWeights = std::array<double, kNumClasses>;
ClassWeights computeClassWeights(std::span<const std::size_t, kNumClasses> counts);

/// Shared weight per model plus an additive offset per class.
struct RegressionWeights {
  std::vector<double> beta;
  std::array<double, kNumClasses> gamma{};
  double cvAccuracy = 0.0;
};

struct FusionSpec {
  int method = 2; // 1..5
  /// acc_m for methods 1, 2 and 4; method 3 weighs models equally.
  std::vector<double> modelWeights;
  std::optional<ClassWeights> classWeights; // method 4
  std::optional<RegressionWeights> regression; // method 5
  /// Min-max rescale each model's logits to [0, 1] first.
  bool rescale = false;
  /// Method 3 only: count argmax votes instead of summing logits.
  bool countVotes = false;
};

/// Maps the smallest entry to 0 and the largest to 1; a constant vector maps
/// to zeros.
Logits rescaleMinMax(const Logits &logits);

/// Fused score vector of video v.
Logits fusedScores(const LogTable &table, const FusionSpec &spec, std::size_t v);
/// One fused record per video carrying the table's label.
std::vector<PredictionRecord> fuse(const LogTable &table, const FusionSpec &spec);

/// Contiguous folds [start, end) over n items; the first n % k folds take
/// one extra item.
std::vector<std::pair<std::size_t, std::size_t>> foldRanges(std::size_t n,
                                                            std::size_t k);

/// Least-squares fit of one-hot targets on the stacked per-(video, class)
/// rows [logit_1c .. logit_Mc, e_c], solved through the normal equations with
/// ridge 1e-8. The CV accuracy comes from k contiguous folds; the returned
/// weights are refit on every video.
RegressionWeights learnRegression(const LogTable &table, std::size_t k,
                                  bool rescale = false);

} // namespace emofuse::fusion
