// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emofuse/tape.hpp"

namespace emofuse::ad {

enum class Unary { kRelu, kSigmoid, kTanh };
enum class Binary { kAdd, kSub, kMul };
enum class Reduction { kMean, kMedian };

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);

Var apply(Unary fn, Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);

/// Elementwise binary op. Shapes must match, or one side must be a rank-1
/// tensor whose length equals the other side's last dimension (bias
/// broadcast).
Var apply(Binary fn, Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

/// alpha * x + beta, constants.
Var affine(Var x, double alpha, double beta);

Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(Var x, Shape shape);
/// Selects `index` along `axis` and drops that axis.
Var take(Var x, std::size_t axis, std::size_t index);
/// Stacks equal-shape parts along a new axis.
Var stack(std::span<const Var> parts, std::size_t axis);

Var sum(Var x);
Var mean(Var x);

/// Softmax over the last axis with max subtraction.
Var softmax(Var logits);
/// Mean over rows of -log softmax(logits)[true class]. `onehot` rows must be
/// one-hot; this is validated.
Var crossEntropy(Var logits, const Tensor &onehot);
/// Convenience overload taking class indices.
Var crossEntropy(Var logits, std::span<const int> labels);

/// Rows of a [n x d] tensor picked by index (repeats allowed).
Var gatherRows(Var x, std::span<const std::size_t> rows);
/// Row i of the result is a[i] when `takeA[i]`, else b[i]. Rank-2 inputs.
Var selectRows(const std::vector<bool> &takeA, Var a, Var b);

/// Reduces [B x T x C] over time using the first lengths[b] steps of row b.
/// Median of an even count is the mean of the two middle values.
Var reduceTime(Var x, std::span<const std::size_t> lengths, Reduction r);

/// Inverted dropout. Eval mode (train=false) or rate 0 returns x unchanged.
Var dropout(Var x, double rate, bool train, std::uint64_t seed);

/// Batch normalisation of [B x F] with batch statistics (train mode).
/// Writes the biased batch mean and variance to `batchMean`/`batchVar`.
Var batchNormTrain(Var x, Var gamma, Var beta, double epsilon,
                   Tensor *batchMean, Tensor *batchVar);

} // namespace emofuse::ad
