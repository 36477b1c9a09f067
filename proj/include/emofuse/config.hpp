// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emofuse/ops.hpp"
#include "emofuse/optim.hpp"

namespace emofuse::pipe {

enum class ModelKind { kAudioFfn, kAudioGru, kVisualGru, kEarlyFusion };
enum class ClassifyMode { kPerFrame, kExactSequence, kPaddedSequence };

struct ModelConfig {
  ModelKind kind = ModelKind::kVisualGru;
  int fusionOption = 1; // early_fusion only, 1..4
  /// Every GRU stack in the model runs in both directions.
  bool bidirectional = false;
  /// Gates the classifier input of the sequence models.
  bool attention = false;
  std::size_t hiddenSize = 128; // visual and fusion GRUs
  std::size_t numLayers = 2;
  std::size_t audioHiddenSize = 64;
  std::size_t audioNumLayers = 4;
  std::size_t ffnHidden = 1024;
  bool batchnorm = false; // audio_ffn only
  /// Dropout on the classifier input; unset means 0.5 for audio_ffn and 0
  /// for the sequence models.
  std::optional<double> dropout;
  std::size_t sequenceLength = 40;
  ClassifyMode classifyMode = ClassifyMode::kExactSequence;
  /// Must stay unset in per_frame mode; otherwise defaults to mean.
  std::optional<ad::Reduction> reduction;
  /// early_fusion option 4: keep the visual GRU fixed (typically restored
  /// from a visual_gru checkpoint).
  bool freezeVisualGru = false;

  double dropoutRate() const;
  ad::Reduction reductionOrMean() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct TrainConfig {
  std::size_t batchSize = 4;
  optim::OptimizerConfig optimizer = defaultOptimizer();
  optim::StagedPlan plan = optim::parsePlan("30:all");

  static optim::OptimizerConfig defaultOptimizer();
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string trainManifest; // resolved against the config file's directory
  std::string validManifest; // optional
  std::string initCheckpoint; // optional; matching tensors are copied in
  std::optional<std::uint64_t> seed;
};

struct ConfigKeyDoc {
  std::string_view key;
  std::string_view fallback;
  std::string_view help;
};

/// Every accepted key with its default and a one-line description.
std::span<const ConfigKeyDoc> configKeys();
std::string configHelp();

/// `key = value` lines; `#` starts a comment. Unknown or repeated keys are
/// errors naming the line.
RunConfig parseRunConfig(std::string_view text, const std::string &origin,
                         const std::string &baseDir);
RunConfig readRunConfig(const std::string &path);

/// The model keys only, in a fixed order. Used for checkpoint headers.
std::vector<std::pair<std::string, std::string>>
modelConfigPairs(const ModelConfig &cfg);
ModelConfig modelConfigFromPairs(
    std::span<const std::pair<std::string, std::string>> pairs,
    const std::string &origin);

std::string_view kindName(ModelKind kind);
std::string_view modeName(ClassifyMode mode);

} // namespace emofuse::pipe
