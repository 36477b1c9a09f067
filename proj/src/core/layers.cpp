// SPDX-License-Identifier: Apache-2.0
#include "emofuse/layers.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "emofuse/error.hpp"

namespace emofuse::nn {

using namespace emofuse::ad;

Parameter &ParameterStore::add(Parameter p) {
  if (find(p.name))
    throw ConfigError("duplicate parameter name " + p.name);
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter &ParameterStore::uniform(const std::string &name,
                                   const std::string &group, Shape shape,
                                   std::size_t fanIn, std::mt19937_64 &rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fanIn, 1)));
  for (double &v : t.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * limit;
  }
  return add(Parameter(name, group, std::move(t)));
}

Parameter &ParameterStore::constant(const std::string &name,
                                    const std::string &group, Shape shape,
                                    double value) {
  return add(Parameter(name, group, Tensor(std::move(shape), value)));
}

Parameter &ParameterStore::state(const std::string &name, Shape shape,
                                 double value) {
  Parameter &p = add(Parameter(name, "", Tensor(std::move(shape), value)));
  p.requiresGrad = false;
  return p;
}

Parameter *ParameterStore::find(const std::string &name) {
  for (auto &p : params_)
    if (p.name == name)
      return &p;
  return nullptr;
}

const Parameter *ParameterStore::find(const std::string &name) const {
  for (const auto &p : params_)
    if (p.name == name)
      return &p;
  return nullptr;
}

std::vector<Parameter *> ParameterStore::all() {
  std::vector<Parameter *> out;
  for (auto &p : params_)
    out.push_back(&p);
  return out;
}

std::vector<const Parameter *> ParameterStore::all() const {
  std::vector<const Parameter *> out;
  for (const auto &p : params_)
    out.push_back(&p);
  return out;
}

std::vector<Parameter *> ParameterStore::trainable() {
  std::vector<Parameter *> out;
  for (auto &p : params_)
    if (p.requiresGrad)
      out.push_back(&p);
  return out;
}

std::vector<std::string> ParameterStore::groups() const {
  std::vector<std::string> out;
  for (const auto &p : params_)
    if (p.requiresGrad &&
        std::find(out.begin(), out.end(), p.group) == out.end())
      out.push_back(p.group);
  return out;
}

std::size_t ParameterStore::trainableCount() const {
  std::size_t n = 0;
  for (const auto &p : params_)
    if (p.requiresGrad)
      n += p.value.numel();
  return n;
}

void ParameterStore::zeroGrad() {
  for (auto &p : params_)
    p.zeroGrad();
}

DenseParams makeDense(ParameterStore &store, const std::string &prefix,
                      const std::string &group, std::size_t in, std::size_t out,
                      Activation act, std::mt19937_64 &rng) {
  DenseParams p;
  p.weight = &store.uniform(prefix + "/W", group, Shape{in, out}, in, rng);
  p.bias = &store.constant(prefix + "/b", group, Shape{out}, 0.0);
  p.activation = act;
  return p;
}

static Var activate(Var x, Activation act) {
  switch (act) {
  case Activation::kNone:
    return x;
  case Activation::kRelu:
    return relu(x);
  case Activation::kTanh:
    return ad::tanh(x);
  case Activation::kSigmoid:
    return sigmoid(x);
  }
  return x;
}

Var denseForward(Var x, const DenseParams &p) {
  Tape &tape = *x.tape();
  Var w = tape.parameter(*p.weight);
  Var b = tape.parameter(*p.bias);
  return activate(add(matmul(x, w), b), p.activation);
}

Var denseForwardSeq(Var x, const DenseParams &p) {
  const Shape s = x.shape();
  if (s.size() != 3)
    throw ShapeError("denseForwardSeq expects [B x T x in], got " +
                     shapeToString(s));
  Var flat = reshape(x, Shape{s[0] * s[1], s[2]});
  Var y = denseForward(flat, p);
  return reshape(y, Shape{s[0], s[1], p.weight->value.dim(1)});
}

GruParams makeGru(ParameterStore &store, const std::string &prefix,
                  const std::string &group, std::size_t inputSize,
                  std::size_t hiddenSize, std::size_t numLayers,
                  std::mt19937_64 &rng) {
  if (inputSize == 0 || hiddenSize == 0 || numLayers == 0)
    throw ConfigError("GRU sizes must be positive");
  GruParams p;
  p.inputSize = inputSize;
  p.hiddenSize = hiddenSize;
  for (std::size_t l = 0; l < numLayers; ++l) {
    const std::string base = prefix + "/l" + std::to_string(l) + "_";
    const std::size_t in = l == 0 ? inputSize : hiddenSize;
    const std::size_t H = hiddenSize;
    GruLayerParams g;
    g.wz = &store.uniform(base + "W_z", group, Shape{in, H}, in, rng);
    g.uz = &store.uniform(base + "U_z", group, Shape{H, H}, H, rng);
    g.bz = &store.constant(base + "b_z", group, Shape{H}, 0.0);
    g.wr = &store.uniform(base + "W_r", group, Shape{in, H}, in, rng);
    g.ur = &store.uniform(base + "U_r", group, Shape{H, H}, H, rng);
    g.br = &store.constant(base + "b_r", group, Shape{H}, 0.0);
    g.wh = &store.uniform(base + "W_h", group, Shape{in, H}, in, rng);
    g.uh = &store.uniform(base + "U_h", group, Shape{H, H}, H, rng);
    g.bh = &store.constant(base + "b_h", group, Shape{H}, 0.0);
    p.layers.push_back(g);
  }
  return p;
}

Var gruCellStep(Var x, Var hPrev, const GruParams &p, std::size_t layer) {
  if (layer >= p.layers.size())
    throw ShapeError("GRU layer index " + std::to_string(layer) +
                     " out of range");
  const GruLayerParams &g = p.layers[layer];
  const std::size_t in = g.wz->value.dim(0);
  if (x.shape().size() != 2 || x.shape()[1] != in ||
      hPrev.shape() != Shape{x.shape()[0], p.hiddenSize})
    throw ShapeError("GRU step shape mismatch: x " + shapeToString(x.shape()) +
                     ", h " + shapeToString(hPrev.shape()) + ", expected in=" +
                     std::to_string(in) + " H=" + std::to_string(p.hiddenSize));
  Tape &tape = *x.tape();
  auto P = [&tape](Parameter *q) { return tape.parameter(*q); };
  Var z = sigmoid(add(add(matmul(x, P(g.wz)), matmul(hPrev, P(g.uz))), P(g.bz)));
  Var r = sigmoid(add(add(matmul(x, P(g.wr)), matmul(hPrev, P(g.ur))), P(g.br)));
  Var c = ad::tanh(
      add(add(matmul(x, P(g.wh)), matmul(mul(r, hPrev), P(g.uh))), P(g.bh)));
  Var keep = affine(z, -1.0, 1.0);
  return add(mul(keep, hPrev), mul(z, c));
}

static void checkLengths(std::span<const std::size_t> lengths, std::size_t B,
                         std::size_t T) {
  if (lengths.size() != B)
    throw ShapeError(std::to_string(lengths.size()) + " lengths for batch of " +
                     std::to_string(B));
  for (auto len : lengths)
    if (len < 1 || len > T)
      throw ContractError("sequence length " + std::to_string(len) +
                          " outside [1, " + std::to_string(T) + "]");
}

Var gruForward(Var seq, std::span<const std::size_t> lengths,
               const GruParams &p) {
  const Shape s = seq.shape();
  if (s.size() != 3 || s[2] != p.inputSize)
    throw ShapeError("gruForward expects [B x T x " +
                     std::to_string(p.inputSize) + "], got " +
                     shapeToString(s));
  const std::size_t B = s[0], T = s[1];
  checkLengths(lengths, B, T);
  Tape &tape = *seq.tape();

  std::vector<Var> steps;
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t)
    steps.push_back(take(seq, 1, t));

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Var h = tape.constant(Tensor(Shape{B, p.hiddenSize}));
    std::vector<Var> out;
    out.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<bool> live(B);
      std::size_t nLive = 0;
      for (std::size_t b = 0; b < B; ++b) {
        live[b] = t < lengths[b];
        nLive += live[b];
      }
      if (nLive > 0) {
        Var next = gruCellStep(steps[t], h, p, l);
        h = nLive == B ? next : selectRows(live, next, h);
      }
      out.push_back(h);
    }
    steps = std::move(out);
  }
  return stack(steps, 1);
}

Var bigruForward(Var seq, std::span<const std::size_t> lengths,
                 const GruParams &forward, const GruParams &backward) {
  const Shape s = seq.shape();
  if (s.size() != 3)
    throw ShapeError("bigruForward expects [B x T x in], got " +
                     shapeToString(s));
  const std::size_t B = s[0], T = s[1], D = s[2];
  checkLengths(lengths, B, T);
  // Per-row reversal of the valid prefix; padded positions map to themselves.
  // The permutation is its own inverse.
  std::vector<std::size_t> perm(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      perm[b * T + t] = b * T + (t < lengths[b] ? lengths[b] - 1 - t : t);

  Var fwd = gruForward(seq, lengths, forward);
  Var rev = reshape(gatherRows(reshape(seq, Shape{B * T, D}), perm),
                    Shape{B, T, D});
  Var bwdRev = gruForward(rev, lengths, backward);
  const std::size_t H = backward.hiddenSize;
  Var bwd = reshape(gatherRows(reshape(bwdRev, Shape{B * T, H}), perm),
                    Shape{B, T, H});
  const Var parts[] = {fwd, bwd};
  return concat(parts, 2);
}

AttentionParams makeAttention(ParameterStore &store, const std::string &prefix,
                              const std::string &group, std::size_t features,
                              std::mt19937_64 &rng) {
  AttentionParams p;
  p.weight = &store.uniform(prefix + "/W_a", group, Shape{features, features},
                            features, rng);
  p.bias = &store.constant(prefix + "/b_a", group, Shape{features}, 0.0);
  return p;
}

Var attentionGate(Var z, Var x, const AttentionParams &p) {
  if (z.shape() != x.shape())
    throw ShapeError("attention gate shape mismatch: " +
                     shapeToString(z.shape()) + " vs " +
                     shapeToString(x.shape()));
  const Shape s = x.shape();
  const std::size_t k = s.back();
  if (p.weight->value.shape() != Shape{k, k})
    throw ShapeError("attention weights " +
                     shapeToString(p.weight->value.shape()) +
                     " do not match feature width " + std::to_string(k));
  Tape &tape = *x.tape();
  Var flat = reshape(x, Shape{x.value().numel() / k, k});
  Var scores = sigmoid(
      add(matmul(flat, tape.parameter(*p.weight)), tape.parameter(*p.bias)));
  return mul(reshape(scores, s), z);
}

Var dropoutForward(Var x, const DropoutSpec &spec, std::uint64_t seed) {
  return ad::dropout(x, spec.rate, spec.mode == Mode::kTrain, seed);
}

BatchNormParams makeBatchNorm(ParameterStore &store, const std::string &prefix,
                              const std::string &group, std::size_t features) {
  BatchNormParams p;
  p.gamma = &store.constant(prefix + "/gamma", group, Shape{features}, 1.0);
  p.beta = &store.constant(prefix + "/beta", group, Shape{features}, 0.0);
  p.runningMean = &store.state(prefix + "/running_mean", Shape{features}, 0.0);
  p.runningVar = &store.state(prefix + "/running_var", Shape{features}, 1.0);
  return p;
}

Var batchnormForward(Var x, BatchNormParams &p, Mode mode) {
  Tape &tape = *x.tape();
  Var gamma = tape.parameter(*p.gamma);
  Var beta = tape.parameter(*p.beta);
  if (mode == Mode::kTrain) {
    Tensor mu, var;
    Var y = batchNormTrain(x, gamma, beta, p.epsilon, &mu, &var);
    Tensor &rm = p.runningMean->value;
    Tensor &rv = p.runningVar->value;
    for (std::size_t f = 0; f < rm.numel(); ++f) {
      rm[f] = p.momentum * rm[f] + (1.0 - p.momentum) * mu[f];
      rv[f] = p.momentum * rv[f] + (1.0 - p.momentum) * var[f];
    }
    return y;
  }
  const Tensor &rm = p.runningMean->value;
  const Tensor &rv = p.runningVar->value;
  if (x.shape().size() != 2 || x.shape()[1] != rm.numel())
    throw ShapeError("batch norm expects [B x " + std::to_string(rm.numel()) +
                     "], got " + shapeToString(x.shape()));
  Tensor inv(rv.shape());
  for (std::size_t f = 0; f < inv.numel(); ++f)
    inv[f] = 1.0 / std::sqrt(rv[f] + p.epsilon);
  Var centred = sub(x, tape.constant(rm));
  Var normed = mul(centred, tape.constant(std::move(inv)));
  return add(mul(normed, gamma), beta);
}

} // namespace emofuse::nn
