// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "emofuse/layers.hpp"

namespace emofuse::optim {

using ad::Parameter;

/// theta <- theta - lr * grad, in place.
void sgdStep(Tensor &param, const Tensor &grad, double lr);
void sgdStep(std::span<Parameter *const> params, double lr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers per parameter plus one shared step counter.
class Adam {
public:
  explicit Adam(AdamConfig cfg = {});

  /// One update of the listed parameters from their `grad` fields. The step
  /// counter is incremented once per call, before bias correction. Parameters
  /// not listed keep their values and moments untouched.
  void step(std::span<Parameter *const> params, double lr);
  /// Same update on a bare tensor; `key` identifies its moment buffers.
  void step(const std::string &key, Tensor &param, const Tensor &grad,
            double lr);

  std::uint64_t t() const noexcept { return t_; }
  const AdamConfig &config() const noexcept { return cfg_; }
  const Tensor *firstMoment(const std::string &key) const;
  const Tensor *secondMoment(const std::string &key) const;

private:
  struct Moments {
    Tensor m, v;
  };
  void update(Moments &mo, Tensor &param, const Tensor &grad, double lr) const;
  Moments &momentsFor(const std::string &key, const Shape &shape);
  void advance();

  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

struct LrSchedule {
  double initial = 1e-4;
  double decay = 1.0;
  std::uint64_t interval = 5000;
  bool staircase = true;
};

/// initial * decay^floor(step / interval) when staircase, otherwise the
/// continuous exponent step / interval.
double lrAt(const LrSchedule &schedule, std::uint64_t step);

struct Stage {
  std::size_t epochs = 0;
  /// Parameter groups updated during the stage; "all" selects every group.
  std::vector<std::string> groups;
};

struct StagedPlan {
  std::vector<Stage> stages;
  std::size_t totalEpochs() const;
};

/// Parses "5:classifier;25:all" (groups within a stage separated by '+').
StagedPlan parsePlan(const std::string &spec);
std::string formatPlan(const StagedPlan &plan);

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  AdamConfig adam;
  LrSchedule schedule;
};

struct BatchOutcome {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct HistoryRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double trainAccuracy = 0.0;
};

/// The model-specific half of a training run.
struct TrainingTask {
  nn::ParameterStore *params = nullptr;
  /// Prepares epoch `epoch` (1-based, global across stages) and returns its
  /// batch count.
  std::function<std::size_t(std::size_t epoch)> beginEpoch;
  /// Forward and backward for one batch; gradients are zeroed beforehand.
  std::function<BatchOutcome(std::size_t batch)> runBatch;
  /// Optional hook after each epoch's history row is recorded.
  std::function<void(const HistoryRow &)> endEpoch;
};

/// Runs every stage in order. Only parameters in the stage's groups are
/// updated; the global step counter and the schedule carry across stages,
/// as do the Adam moments.
std::vector<HistoryRow> runStagedTraining(TrainingTask &task,
                                          const StagedPlan &plan,
                                          const OptimizerConfig &cfg);

/// `step,epoch,lr,loss,train_accuracy` with a header line.
std::string historyCsv(const std::vector<HistoryRow> &rows);

} // namespace emofuse::optim
