// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "emofuse/ops.hpp"
#include "emofuse/tape.hpp"

namespace emofuse::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

enum class Activation { kNone, kRelu, kTanh, kSigmoid };

/// Owns the parameters of one model with stable addresses. Names follow
/// `<model>/<layer>/<param>`.
class ParameterStore {
public:
  /// Weight drawn uniformly from [-sqrt(1/fanIn), +sqrt(1/fanIn)].
  Parameter &uniform(const std::string &name, const std::string &group,
                     Shape shape, std::size_t fanIn, std::mt19937_64 &rng);
  Parameter &constant(const std::string &name, const std::string &group,
                      Shape shape, double value);
  /// Non-trainable state (running statistics); checkpointed, never updated
  /// by optimizers.
  Parameter &state(const std::string &name, Shape shape, double value);

  Parameter *find(const std::string &name);
  const Parameter *find(const std::string &name) const;
  std::vector<Parameter *> all();
  std::vector<const Parameter *> all() const;
  std::vector<Parameter *> trainable();
  std::vector<std::string> groups() const;
  std::size_t trainableCount() const;
  void zeroGrad();

private:
  Parameter &add(Parameter p);
  std::deque<Parameter> params_;
};

struct DenseParams {
  Parameter *weight = nullptr; // [in x out]
  Parameter *bias = nullptr;   // [out]
  Activation activation = Activation::kNone;
};

DenseParams makeDense(ParameterStore &store, const std::string &prefix,
                      const std::string &group, std::size_t in, std::size_t out,
                      Activation act, std::mt19937_64 &rng);

/// activation(x . W + b) for x of shape [B x in].
Var denseForward(Var x, const DenseParams &p);
/// Applies a dense layer independently to every timestep of [B x T x in].
Var denseForwardSeq(Var x, const DenseParams &p);

struct GruLayerParams {
  Parameter *wz = nullptr, *uz = nullptr, *bz = nullptr;
  Parameter *wr = nullptr, *ur = nullptr, *br = nullptr;
  Parameter *wh = nullptr, *uh = nullptr, *bh = nullptr;
};

struct GruParams {
  std::size_t inputSize = 0;
  std::size_t hiddenSize = 128;
  std::vector<GruLayerParams> layers;
};

GruParams makeGru(ParameterStore &store, const std::string &prefix,
                  const std::string &group, std::size_t inputSize,
                  std::size_t hiddenSize, std::size_t numLayers,
                  std::mt19937_64 &rng);

/// One GRU step of layer `layer`:
///   z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
///   c = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * c.
Var gruCellStep(Var x, Var hPrev, const GruParams &p, std::size_t layer);

/// Runs the stacked GRU over [B x T x in] from a zero state. Row b is only
/// advanced for t < lengths[b]; after that its state is carried unchanged.
Var gruForward(Var seq, std::span<const std::size_t> lengths,
               const GruParams &p);

/// Forward and backward stacks, the backward one fed the reversed valid
/// prefix of every row. Output [B x T x 2H], forward half first.
Var bigruForward(Var seq, std::span<const std::size_t> lengths,
                 const GruParams &forward, const GruParams &backward);

struct AttentionParams {
  Parameter *weight = nullptr; // [k x k]
  Parameter *bias = nullptr;   // [k]
};

AttentionParams makeAttention(ParameterStore &store, const std::string &prefix,
                              const std::string &group, std::size_t features,
                              std::mt19937_64 &rng);

/// g = sigmoid(x Wa + ba) * z, per timestep and per feature.
Var attentionGate(Var z, Var x, const AttentionParams &p);

enum class Mode { kTrain, kEval };

struct DropoutSpec {
  double rate = 0.5;
  Mode mode = Mode::kEval;
};

Var dropoutForward(Var x, const DropoutSpec &spec, std::uint64_t seed);

struct BatchNormParams {
  Parameter *gamma = nullptr;
  Parameter *beta = nullptr;
  Parameter *runningMean = nullptr;
  Parameter *runningVar = nullptr;
  double momentum = 0.99;
  double epsilon = 1e-3;
};

BatchNormParams makeBatchNorm(ParameterStore &store, const std::string &prefix,
                              const std::string &group, std::size_t features);

/// Train mode normalises with batch statistics and folds them into the
/// running estimates; eval mode uses the running estimates.
Var batchnormForward(Var x, BatchNormParams &p, Mode mode);

} // namespace emofuse::nn
