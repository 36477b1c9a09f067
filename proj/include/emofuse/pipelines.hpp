// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emofuse/checkpoint.hpp"
#include "emofuse/config.hpp"
#include "emofuse/layers.hpp"
#include "emofuse/metrics.hpp"
#include "emofuse/predlog.hpp"
#include "emofuse/seqprep.hpp"

namespace emofuse::pipe {

using ad::Tape;
using ad::Parameter;
using ad::Var;

bool usesVisual(const ModelConfig &cfg);
seq::AudioKind audioKind(const ModelConfig &cfg);

/// Blocks ready for batching plus the feature widths they carry.
struct Dataset {
  std::vector<seq::SequenceBlock> blocks;
  std::size_t visualDim = 0;
  std::size_t audioDim = 0;
  std::size_t videos = 0;
};

Dataset buildDataset(const ModelConfig &cfg,
                     const std::vector<seq::VideoSequence> &videos,
                     seq::FeatureLoader &loader);
/// Parses the manifest and loads its features relative to the manifest.
Dataset loadDataset(const ModelConfig &cfg, const std::string &manifestPath);

/// Executable graph for one pipeline. Parameters live in the model's store;
/// every call to a forward method records onto the caller's tape.
class Model {
public:
  Model(ModelConfig cfg, std::size_t visualDim, std::size_t audioDim,
        std::uint64_t seed);

  const ModelConfig &config() const noexcept { return cfg_; }
  std::size_t visualDim() const noexcept { return visualDim_; }
  std::size_t audioDim() const noexcept { return audioDim_; }
  nn::ParameterStore &params() noexcept { return *store_; }
  const nn::ParameterStore &params() const noexcept { return *store_; }
  /// Width of the concatenated features in early fusion; 0 for other kinds.
  std::size_t fusionInputWidth() const noexcept { return fusionWidth_; }

  /// [B x T x 7]; T = 1 for audio_ffn.
  Var frameLogits(Tape &tape, const seq::Batch &batch, nn::Mode mode,
                  std::uint64_t seed);
  /// Same graph over caller-made input nodes; an unused modality may be an
  /// invalid Var.
  Var frameLogits(Var visual, Var audio, std::span<const std::size_t> lengths,
                  nn::Mode mode, std::uint64_t seed);
  /// [B x 7]. per_frame models score a block by the mean of its valid frames.
  Var blockLogits(Var frameLogits, const seq::Batch &batch) const;
  /// Scalar training loss. `blockOut`, when given, receives blockLogits.
  Var loss(Tape &tape, const seq::Batch &batch, nn::Mode mode,
           std::uint64_t seed, Tensor *blockOut = nullptr);

  Checkpoint checkpoint() const;
  static Model fromCheckpoint(const Checkpoint &ck, const std::string &origin);
  /// Copies tensors whose name and shape match; returns how many were copied.
  std::size_t initFrom(const Checkpoint &ck);

private:
  struct GruStack {
    nn::GruParams forward, backward;
    bool bidirectional = false;
    std::size_t width() const;
  };
  GruStack makeStack(const std::string &prefix, const std::string &group,
                     std::size_t in, std::size_t hidden, std::size_t layers,
                     std::mt19937_64 &rng);
  static Var runStack(Var x, std::span<const std::size_t> lengths,
                      const GruStack &s);

  ModelConfig cfg_;
  std::size_t visualDim_, audioDim_;
  std::unique_ptr<nn::ParameterStore> store_;
  std::size_t fusionWidth_ = 0;
  nn::DenseParams hidden_, classifier_;
  std::optional<nn::BatchNormParams> bn_;
  std::optional<GruStack> visualGru_, audioGru_, fusionGru_;
  std::optional<nn::AttentionParams> attention_;
};

/// Reduces [B x T x 7] frame logits to [B x 7]. exact_sequence uses the first
/// lengths[b] frames, padded_sequence all T. per_frame is a contract error.
Var aggregateLogits(Var frameLogits, std::span<const std::size_t> lengths,
                    ClassifyMode mode, ad::Reduction reduction);

struct BlockPrediction {
  std::string videoId;
  eval::Logits logits{};
  std::optional<int> label;
};

/// Video logits are the mean of the video's block logits; videos keep
/// first-appearance order.
std::vector<eval::PredictionRecord>
videoPredictions(std::span<const BlockPrediction> blocks);

/// Eval-mode predictions, one record per video.
std::vector<eval::PredictionRecord> predict(Model &model, const Dataset &data,
                                            std::size_t batchSize = 32);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double accuracy = 0.0;
  double macroF1 = 0.0;
};

struct TrainResult {
  std::vector<optim::HistoryRow> history;
  /// Validation rows after every epoch, then one eval-mode row on the
  /// training split after the final epoch.
  std::vector<EpochMetrics> metrics;
};

TrainResult train(Model &model, const TrainConfig &cfg, const Dataset &trainSet,
                  const Dataset *validSet, std::uint64_t seed);

/// `epoch,split,accuracy,macro_f1` with a header line.
std::string metricsCsv(std::span<const EpochMetrics> rows);

/// File-level drivers. `train` writes checkpoint.txt, history.csv and
/// metrics.csv into outDir; `evaluate` writes predictions.log and, when every
/// video is labelled, metrics.txt.
struct TrainRun {
  TrainResult result;
  std::string checkpointPath;
};
TrainRun runTraining(const RunConfig &cfg, std::uint64_t seed,
                     const std::string &outDir);

struct EvalRun {
  std::vector<eval::PredictionRecord> records;
  std::optional<eval::MetricsReport> metrics;
};
EvalRun runEvaluation(const std::string &checkpointPath,
                      const std::string &manifestPath, const std::string &outDir);

/// Deterministic 64-bit mix used to derive per-epoch and per-batch seeds.
std::uint64_t mixSeed(std::uint64_t seed, std::uint64_t salt);

} // namespace emofuse::pipe
