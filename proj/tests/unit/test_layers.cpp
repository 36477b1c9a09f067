// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "emofuse/checkpoint.hpp"
#include "emofuse/error.hpp"
#include "emofuse/gradcheck.hpp"
#include "emofuse/layers.hpp"
#include "test_util.hpp"

using namespace emofuse;
using namespace emofuse::ad;
using namespace emofuse::nn;
using emofuse::testing::randomTensor;

namespace {

void randomize(ParameterStore &store, std::mt19937_64 &rng, double lo = -1.0,
               double hi = 1.0) {
  for (Parameter *p : store.all())
    if (p->requiresGrad)
      p->value = randomTensor(p->value.shape(), rng, lo, hi);
}

void zeroAll(ParameterStore &store) {
  for (Parameter *p : store.all())
    p->value.fill(0.0);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop GRU step, written independently of the tape code:
// row-vector convention, x[in], h[H].
std::vector<double> oracleStep(const std::vector<double> &x,
                               const std::vector<double> &h,
                               const GruLayerParams &g) {
  const std::size_t in = x.size(), H = h.size();
  auto lin = [&](const Parameter *W, const Parameter *U, const Parameter *b,
                 const std::vector<double> &hv) {
    std::vector<double> out(H);
    for (std::size_t j = 0; j < H; ++j) {
      double s = b->value[j];
      for (std::size_t i = 0; i < in; ++i)
        s += x[i] * W->value.at(i, j);
      for (std::size_t i = 0; i < H; ++i)
        s += hv[i] * U->value.at(i, j);
      out[j] = s;
    }
    return out;
  };
  auto z = lin(g.wz, g.uz, g.bz, h);
  auto r = lin(g.wr, g.ur, g.br, h);
  for (auto &v : z)
    v = sig(v);
  for (auto &v : r)
    v = sig(v);
  std::vector<double> rh(H);
  for (std::size_t i = 0; i < H; ++i)
    rh[i] = r[i] * h[i];
  auto c = lin(g.wh, g.uh, g.bh, rh);
  std::vector<double> out(H);
  for (std::size_t j = 0; j < H; ++j)
    out[j] = (1.0 - z[j]) * h[j] + z[j] * std::tanh(c[j]);
  return out;
}

// Unrolled stacked GRU over one sequence of T frames (no padding).
std::vector<std::vector<double>>
oracleSequence(const std::vector<std::vector<double>> &frames,
               const GruParams &p) {
  auto input = frames;
  for (const auto &layer : p.layers) {
    std::vector<double> h(p.hiddenSize, 0.0);
    std::vector<std::vector<double>> out;
    for (const auto &x : input) {
      h = oracleStep(x, h, layer);
      out.push_back(h);
    }
    input = out;
  }
  return input;
}

std::vector<std::vector<double>> rowFrames(const Tensor &seq, std::size_t b,
                                           std::size_t len) {
  std::vector<std::vector<double>> frames;
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> f(seq.dim(2));
    for (std::size_t d = 0; d < f.size(); ++d)
      f[d] = seq.at(b, t, d);
    frames.push_back(f);
  }
  return frames;
}

} // namespace

TEST(Dense, IdentityAndHandValue) {
  ParameterStore store;
  std::mt19937_64 rng(0);
  auto d = makeDense(store, "m/fc", "classifier", 2, 2, Activation::kNone, rng);
  d.weight->value = Tensor::matrix({{1, 0}, {0, 1}});
  d.bias->value.fill(0.0);
  Tape tape;
  Tensor x = Tensor::matrix({{3, -4}});
  EXPECT_EQ(denseForward(tape.constant(x), d).value(), x);

  auto e = makeDense(store, "m/fc2", "classifier", 2, 1, Activation::kNone, rng);
  e.weight->value = Tensor::matrix({{1}, {1}});
  e.bias->value = Tensor::vector({0.5});
  EXPECT_EQ(denseForward(tape.constant(Tensor::matrix({{1, 1}})), e)
                .value()
                .item(),
            2.5);
  EXPECT_THROW(denseForward(tape.constant(Tensor(Shape{1, 3})), e), ShapeError);
}

TEST(Dense, GradientCheck) {
  ParameterStore store;
  std::mt19937_64 rng(1);
  auto d = makeDense(store, "m/fc", "classifier", 5, 4, Activation::kTanh, rng);
  randomize(store, rng);
  Tensor x = randomTensor({3, 5}, rng);
  const int labels[] = {0, 1, 3};
  auto report = finiteDiffCheck(
      [&](Tape &t) { return crossEntropy(denseForward(t.constant(x), d), labels); },
      store.trainable());
  EXPECT_LE(report.maxRelError, 1e-4);
}

TEST(GruCell, ZeroWeightsHalveState) {
  ParameterStore store;
  std::mt19937_64 rng(2);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 1, rng);
  zeroAll(store);
  Tape tape;
  Tensor h = Tensor::matrix({{0.2, -0.4, 0.8, -1.0}});
  Var out = gruCellStep(tape.constant(randomTensor({1, 3}, rng)),
                        tape.constant(h), g, 0);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(out.value()[i], 0.5 * h[i]);
}

TEST(GruCell, ZeroStateAndZeroCandidatePathGiveZero) {
  ParameterStore store;
  std::mt19937_64 rng(3);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 1, rng);
  randomize(store, rng);
  g.layers[0].wh->value.fill(0.0);
  g.layers[0].uh->value.fill(0.0);
  g.layers[0].bh->value.fill(0.0);
  Tape tape;
  Var out = gruCellStep(tape.constant(randomTensor({2, 3}, rng)),
                        tape.constant(Tensor(Shape{2, 4})), g, 0);
  for (double v : out.value().values())
    EXPECT_EQ(v, 0.0);
}

TEST(GruCell, MatchesDirectFormula) {
  ParameterStore store;
  std::mt19937_64 rng(4);
  auto g = makeGru(store, "m/gru", "gru", 5, 6, 1, rng);
  randomize(store, rng);
  Tensor x = randomTensor({1, 5}, rng);
  Tensor h = randomTensor({1, 6}, rng, -1.0, 1.0);
  Tape tape;
  Var out = gruCellStep(tape.constant(x), tape.constant(h), g, 0);
  auto expect = oracleStep(std::vector<double>(x.data()),
                           std::vector<double>(h.data()), g.layers[0]);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(out.value()[i], expect[i], 1e-12);
  EXPECT_THROW(gruCellStep(tape.constant(Tensor(Shape{1, 4})), tape.constant(h),
                           g, 0),
               ShapeError);
}

TEST(GruForward, SingleStepEqualsCell) {
  ParameterStore store;
  std::mt19937_64 rng(5);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 1, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({2, 1, 3}, rng);
  const std::size_t lens[] = {1, 1};
  Tape tape;
  Var states = gruForward(tape.constant(seq), lens, g);
  Var step = gruCellStep(tape.constant(seq.reshaped({2, 3})),
                         tape.constant(Tensor(Shape{2, 4})), g, 0);
  EXPECT_EQ(states.value().reshaped({2, 4}), step.value());
}

TEST(GruForward, UnpaddedMatchesUnrolledOracle) {
  ParameterStore store;
  std::mt19937_64 rng(6);
  auto g = makeGru(store, "m/gru", "gru", 4, 5, 2, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({3, 6, 4}, rng);
  const std::size_t lens[] = {6, 6, 6};
  Tape tape;
  Var states = gruForward(tape.constant(seq), lens, g);
  for (std::size_t b = 0; b < 3; ++b) {
    auto expect = oracleSequence(rowFrames(seq, b, 6), g);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t j = 0; j < 5; ++j)
        EXPECT_NEAR(states.value().at(b, t, j), expect[t][j], 1e-12);
  }
}

TEST(GruForward, PaddedFramesDoNotAffectValidStates) {
  ParameterStore store;
  std::mt19937_64 rng(7);
  auto g = makeGru(store, "m/gru", "gru", 4, 5, 2, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({3, 8, 4}, rng);
  const std::size_t lens[] = {8, 3, 5};
  Tape tape;
  Tensor base = gruForward(tape.constant(seq), lens, g).value();
  for (int trial = 0; trial < 10; ++trial) {
    Tensor noisy = seq;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = lens[b]; t < 8; ++t)
        for (std::size_t d = 0; d < 4; ++d)
          noisy.at(b, t, d) = randomTensor({1}, rng, -100, 100)[0];
    Tensor out = gruForward(tape.constant(noisy), lens, g).value();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t j = 0; j < 5; ++j)
          EXPECT_EQ(out.at(b, t, j), base.at(b, t, j));
  }
  // frozen past the end
  for (std::size_t t = 3; t < 8; ++t)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_EQ(base.at(1, t, j), base.at(1, 2, j));
}

TEST(GruForward, LengthErrors) {
  ParameterStore store;
  std::mt19937_64 rng(8);
  auto g = makeGru(store, "m/gru", "gru", 2, 3, 1, rng);
  Tape tape;
  Var seq = tape.constant(Tensor(Shape{2, 4, 2}));
  const std::size_t zero[] = {0, 4};
  const std::size_t over[] = {5, 4};
  const std::size_t few[] = {4};
  EXPECT_THROW(gruForward(seq, zero, g), ContractError);
  EXPECT_THROW(gruForward(seq, over, g), ContractError);
  EXPECT_THROW(gruForward(seq, few, g), ShapeError);
}

TEST(GruProperty, HiddenStatesStayInUnitInterval) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    ParameterStore store;
    auto g = makeGru(store, "m/gru", "gru", 3, 4, 3, rng);
    randomize(store, rng, -5.0, 5.0);
    Tensor seq = randomTensor({2, 10, 3}, rng, -50.0, 50.0);
    const std::size_t lens[] = {10, 4};
    Tape tape;
    for (double v : gruForward(tape.constant(seq), lens, g).value().values()) {
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, -1.0);
    }
  }
}

TEST(GruProperty, PaddedInputGradientsAreExactlyZero) {
  ParameterStore store;
  std::mt19937_64 rng(10);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 2, rng);
  randomize(store, rng);
  const std::size_t lens[] = {6, 2, 4};
  Tape tape;
  Var seq = tape.input(randomTensor({3, 6, 3}, rng));
  Var states = gruForward(seq, lens, g);
  Var pooled = reduceTime(states, lens, Reduction::kMean);
  tape.backward(sum(mul(pooled, pooled)));
  Tensor grad = tape.grad(seq);
  bool anyValidNonzero = false;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t d = 0; d < 3; ++d) {
        if (t >= lens[b])
          EXPECT_EQ(grad.at(b, t, d), 0.0);
        else
          anyValidNonzero |= grad.at(b, t, d) != 0.0;
      }
  EXPECT_TRUE(anyValidNonzero);
}

TEST(GruGradient, OneLayerThreeStepsPassesCheck) {
  ParameterStore store;
  std::mt19937_64 rng(11);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 1, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({2, 3, 3}, rng);
  Tensor w = randomTensor({2, 3, 4}, rng);
  const std::size_t lens[] = {3, 2};
  auto report = finiteDiffCheck(
      [&](Tape &t) {
        return sum(mul(gruForward(t.constant(seq), lens, g), t.constant(w)));
      },
      store.trainable());
  EXPECT_LE(report.maxRelError, 1e-4);
}

TEST(Bigru, PalindromeCentreHalvesAgree) {
  ParameterStore store;
  std::mt19937_64 rng(12);
  auto g = makeGru(store, "m/fwd", "gru", 3, 4, 2, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({1, 5, 3}, rng);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t d = 0; d < 3; ++d)
      seq.at(0, 4 - t, d) = seq.at(0, t, d);
  const std::size_t lens[] = {5};
  Tape tape;
  Tensor out = bigruForward(tape.constant(seq), lens, g, g).value();
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_EQ(out.at(0, 2, j), out.at(0, 2, 4 + j));
}

TEST(Bigru, DefaultWidthIsTwiceHidden) {
  ParameterStore store;
  std::mt19937_64 rng(13);
  auto f = makeGru(store, "m/fwd", "gru", 8, 128, 2, rng);
  auto b = makeGru(store, "m/bwd", "gru", 8, 128, 2, rng);
  Tape tape;
  const std::size_t lens[] = {3};
  EXPECT_EQ(bigruForward(tape.constant(Tensor(Shape{1, 3, 8})), lens, f, b)
                .shape(),
            (Shape{1, 3, 256}));
}

TEST(Bigru, MatchesTwoIndependentGruPasses) {
  ParameterStore store;
  std::mt19937_64 rng(14);
  auto f = makeGru(store, "m/fwd", "gru", 3, 4, 2, rng);
  auto b = makeGru(store, "m/bwd", "gru", 3, 4, 2, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({2, 6, 3}, rng);
  const std::size_t lens[] = {6, 4};
  Tape tape;
  Tensor out = bigruForward(tape.constant(seq), lens, f, b).value();
  for (std::size_t row = 0; row < 2; ++row) {
    auto frames = rowFrames(seq, row, lens[row]);
    auto fwd = oracleSequence(frames, f);
    std::reverse(frames.begin(), frames.end());
    auto bwd = oracleSequence(frames, b);
    for (std::size_t t = 0; t < lens[row]; ++t)
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(out.at(row, t, j), fwd[t][j], 1e-12);
        EXPECT_NEAR(out.at(row, t, 4 + j), bwd[lens[row] - 1 - t][j], 1e-12);
      }
  }
}

TEST(Bigru, GradientCheck) {
  ParameterStore store;
  std::mt19937_64 rng(15);
  auto f = makeGru(store, "m/fwd", "gru", 2, 3, 1, rng);
  auto b = makeGru(store, "m/bwd", "gru", 2, 3, 1, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({2, 4, 2}, rng);
  Tensor w = randomTensor({2, 6}, rng);
  const std::size_t lens[] = {4, 2};
  auto report = finiteDiffCheck(
      [&](Tape &t) {
        Var out = bigruForward(t.constant(seq), lens, f, b);
        return sum(mul(reduceTime(out, lens, Reduction::kMean), t.constant(w)));
      },
      store.trainable());
  EXPECT_LE(report.maxRelError, 1e-4);
}

TEST(Attention, ZeroScoresHalveAndSaturationPasses) {
  ParameterStore store;
  std::mt19937_64 rng(16);
  auto a = makeAttention(store, "m/att", "attention", 3, rng);
  a.weight->value.fill(0.0);
  Tensor z = randomTensor({2, 4, 3}, rng);
  Tape tape;
  Tensor g = attentionGate(tape.constant(z), tape.constant(z), a).value();
  for (std::size_t i = 0; i < g.numel(); ++i)
    EXPECT_EQ(g[i], 0.5 * z[i]);
  a.bias->value.fill(60.0);
  Tape fresh;
  g = attentionGate(fresh.constant(z), fresh.constant(z), a).value();
  for (std::size_t i = 0; i < g.numel(); ++i)
    EXPECT_NEAR(g[i], z[i], 1e-15);
  EXPECT_THROW(attentionGate(tape.constant(z), tape.constant(Tensor(Shape{2, 4, 2})), a),
               ShapeError);
}

TEST(Attention, GateNeverAmplifies) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterStore store;
    auto a = makeAttention(store, "m/att", "attention", 4, rng);
    randomize(store, rng, -3, 3);
    Tensor z = randomTensor({2, 3, 4}, rng, -5, 5);
    Tensor x = randomTensor({2, 3, 4}, rng, -5, 5);
    Tape tape;
    Tensor g = attentionGate(tape.constant(z), tape.constant(x), a).value();
    for (std::size_t i = 0; i < g.numel(); ++i)
      EXPECT_LE(std::abs(g[i]), std::abs(z[i]));
  }
}

TEST(Attention, JointGradientOverMainAndScoreNetworks) {
  ParameterStore store;
  std::mt19937_64 rng(18);
  auto g = makeGru(store, "m/gru", "gru", 3, 4, 1, rng);
  auto a = makeAttention(store, "m/att", "attention", 4, rng);
  randomize(store, rng);
  Tensor seq = randomTensor({2, 3, 3}, rng);
  Tensor w = randomTensor({2, 3, 4}, rng);
  const std::size_t lens[] = {3, 3};
  auto report = finiteDiffCheck(
      [&](Tape &t) {
        Var z = gruForward(t.constant(seq), lens, g);
        return sum(mul(attentionGate(z, z, a), t.constant(w)));
      },
      store.trainable());
  EXPECT_LE(report.maxRelError, 1e-4);
  bool sawGru = false, sawAttention = false;
  for (const auto &e : report.perParameter) {
    sawGru |= e.name.rfind("m/gru", 0) == 0;
    sawAttention |= e.name.rfind("m/att", 0) == 0;
  }
  EXPECT_TRUE(sawGru && sawAttention);
}

TEST(Dropout, IdentityCasesAndStatistics) {
  Tape tape;
  Tensor ones(Shape{100000}, 1.0);
  Var x = tape.constant(ones);
  EXPECT_EQ(dropoutForward(x, {0.0, Mode::kTrain}, 1).value(), ones);
  EXPECT_EQ(dropoutForward(x, {0.5, Mode::kEval}, 1).value(), ones);

  Var y = dropoutForward(x, {0.5, Mode::kTrain}, 42);
  std::size_t survivors = 0;
  double total = 0.0;
  for (double v : y.value().values()) {
    survivors += v != 0.0;
    total += v;
  }
  EXPECT_NEAR(static_cast<double>(survivors) / 1e5, 0.5, 0.01);
  EXPECT_NEAR(total / 1e5, 1.0, 0.02);
  EXPECT_EQ(dropoutForward(x, {0.5, Mode::kTrain}, 42).value(), y.value());
  EXPECT_NE(dropoutForward(x, {0.5, Mode::kTrain}, 43).value(), y.value());
  EXPECT_THROW(dropoutForward(x, {1.0, Mode::kTrain}, 1), ContractError);
}

// The checker refuses stochastic tapes, so the mask is pinned by reusing the
// seed and the central difference is taken by hand.
TEST(Dropout, GradientMatchesFiniteDifferencesWithFixedMask) {
  std::mt19937_64 rng(8);
  Parameter x("x", "g", randomTensor({4, 6}, rng));
  const Tensor w = randomTensor({4, 6}, rng);
  auto loss = [&](Tape &t) {
    return sum(mul(dropoutForward(t.parameter(x), {0.4, Mode::kTrain}, 99),
                   t.constant(w)));
  };
  {
    Tape t;
    t.backward(loss(t));
  }
  const double eps = 1e-5;
  for (std::size_t i = 0; i < x.value.numel(); ++i) {
    const double saved = x.value[i];
    x.value[i] = saved + eps;
    Tape up;
    const double lu = loss(up).value().item();
    x.value[i] = saved - eps;
    Tape down;
    const double ld = loss(down).value().item();
    x.value[i] = saved;
    const double numeric = (lu - ld) / (2 * eps);
    EXPECT_NEAR(x.grad[i], numeric, 1e-8 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(BatchNorm, TrainNormalisesAndDegenerateColumnIsZero) {
  ParameterStore store;
  auto bn = makeBatchNorm(store, "m/bn", "ffn", 3);
  bn.epsilon = 1e-12;
  std::mt19937_64 rng(19);
  Tensor x = randomTensor({16, 3}, rng, -3, 5);
  for (std::size_t b = 0; b < 16; ++b)
    x.at(b, 2) = 4.25;
  Tape tape;
  Tensor y = batchnormForward(tape.constant(x), bn, Mode::kTrain).value();
  for (std::size_t f = 0; f < 2; ++f) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 16; ++b)
      m += y.at(b, f) / 16.0;
    for (std::size_t b = 0; b < 16; ++b)
      v += (y.at(b, f) - m) * (y.at(b, f) - m) / 16.0;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
  for (std::size_t b = 0; b < 16; ++b)
    EXPECT_EQ(y.at(b, 2), 0.0);
  EXPECT_NE(bn.runningMean->value[0], 0.0);
  EXPECT_THROW(batchnormForward(tape.constant(Tensor(Shape{1, 3})), bn, Mode::kTrain),
               ContractError);
}

TEST(BatchNorm, EvalMatchesFormula) {
  ParameterStore store;
  auto bn = makeBatchNorm(store, "m/bn", "ffn", 4);
  std::mt19937_64 rng(20);
  bn.gamma->value = randomTensor({4}, rng);
  bn.beta->value = randomTensor({4}, rng);
  bn.runningMean->value = randomTensor({4}, rng);
  bn.runningVar->value = randomTensor({4}, rng, 0.1, 3.0);
  Tensor x = randomTensor({1, 4}, rng);
  Tape tape;
  Tensor y = batchnormForward(tape.constant(x), bn, Mode::kEval).value();
  for (std::size_t f = 0; f < 4; ++f) {
    const double expect = (x[f] - bn.runningMean->value[f]) /
                              std::sqrt(bn.runningVar->value[f] + bn.epsilon) *
                              bn.gamma->value[f] +
                          bn.beta->value[f];
    EXPECT_NEAR(y[f], expect, 1e-12);
  }
}

TEST(BatchNorm, TrainGradientCheck) {
  ParameterStore store;
  auto bn = makeBatchNorm(store, "m/bn", "ffn", 3);
  std::mt19937_64 rng(21);
  randomize(store, rng);
  Parameter x("x", "in", randomTensor({5, 3}, rng));
  Tensor w = randomTensor({5, 3}, rng);
  auto params = store.trainable();
  params.push_back(&x);
  auto report = finiteDiffCheck(
      [&](Tape &t) {
        return sum(mul(batchnormForward(t.parameter(x), bn, Mode::kTrain),
                       t.constant(w)));
      },
      params);
  EXPECT_LE(report.maxRelError, 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParameterStore store;
  std::mt19937_64 rng(22);
  makeGru(store, "visual/gru", "visual_gru", 3, 4, 2, rng);
  makeDense(store, "visual/fc", "classifier", 4, 7, Activation::kNone, rng);
  makeBatchNorm(store, "visual/bn", "classifier", 4);
  randomize(store, rng, -1e3, 1e3);
  store.find("visual/fc/b")->value[0] = 0.1;
  store.find("visual/fc/b")->value[1] = -1e-300;
  Checkpoint ck = snapshot(store, {{"kind", "visual_gru"}});
  const std::string bytes = serializeCheckpoint(ck);
  Checkpoint back = parseCheckpoint(bytes, "mem");
  EXPECT_EQ(serializeCheckpoint(back), bytes);

  ParameterStore other;
  std::mt19937_64 rng2(999);
  makeGru(other, "visual/gru", "visual_gru", 3, 4, 2, rng2);
  makeDense(other, "visual/fc", "classifier", 4, 7, Activation::kNone, rng2);
  makeBatchNorm(other, "visual/bn", "classifier", 4);
  restore(other, back);
  for (const Parameter *p : store.all())
    EXPECT_EQ(other.find(p->name)->value, p->value) << p->name;
  EXPECT_EQ(back.config.at(0).second, "visual_gru");

  ParameterStore wrong;
  makeGru(wrong, "visual/gru", "visual_gru", 3, 5, 2, rng2);
  makeDense(wrong, "visual/fc", "classifier", 5, 7, Activation::kNone, rng2);
  makeBatchNorm(wrong, "visual/bn", "classifier", 5);
  EXPECT_THROW(restore(wrong, back), ShapeError);
  EXPECT_THROW(parseCheckpoint("nonsense\n", "mem"), FormatError);
}
