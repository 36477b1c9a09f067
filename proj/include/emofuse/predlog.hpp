// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emofuse/seqprep.hpp"

namespace emofuse::eval {

using Logits = std::array<double, seq::kNumClasses>;

struct PredictionRecord {
  std::string videoId;
  Logits logits{};
  int predicted = 0;        // argmax(logits), lowest index on ties
  std::optional<int> label; // absent for unlabelled splits
};

/// Index of the largest entry; the lowest index wins ties.
int argmax(std::span<const double> values);

/// Builds a record whose prediction is argmax(logits).
PredictionRecord makeRecord(std::string videoId, const Logits &logits,
                            std::optional<int> label);

/// One line per record: `video_id<TAB>label_or_-<TAB>pred<TAB>l0,...,l6`, logits
/// at 17 significant digits.
std::string formatPredictionLog(std::span<const PredictionRecord> records);
/// Rejects malformed lines and predictions that disagree with their logits.
std::vector<PredictionRecord> parsePredictionLog(std::string_view text,
                                                 const std::string &origin);
void writePredictionLog(std::span<const PredictionRecord> records,
                        const std::string &path);
std::vector<PredictionRecord> readPredictionLog(const std::string &path);

/// Writes `<video_id>.txt` holding the predicted label word and a newline.
/// Returns the written paths in record order.
std::vector<std::filesystem::path>
writeSubmission(std::span<const PredictionRecord> records,
                const std::filesystem::path &dir);
/// Reads every `*.txt` in `dir` back into sample id -> class index.
std::map<std::string, int> readSubmission(const std::filesystem::path &dir);

} // namespace emofuse::eval
