// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "emofuse/error.hpp"
#include "emofuse/gradcheck.hpp"
#include "emofuse/pipelines.hpp"
#include "emofuse/textio.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace emofuse;
using namespace emofuse::pipe;
namespace tst = emofuse::testing;
using tst::randomTensor;
using tst::scratchDir;

namespace {

ModelConfig fusionConfig(int option) {
  ModelConfig c;
  c.kind = ModelKind::kEarlyFusion;
  c.fusionOption = option;
  c.hiddenSize = 5;
  c.numLayers = 1;
  c.audioHiddenSize = 3;
  c.audioNumLayers = 1;
  return c;
}

seq::Batch randomBatch(std::size_t B, std::size_t T, std::size_t dv, std::size_t da,
                       std::vector<std::size_t> lengths, std::mt19937_64 &rng) {
  seq::Batch b;
  if (dv)
    b.visual = randomTensor({B, T, dv}, rng);
  if (da)
    b.audio = randomTensor({B, T, da}, rng);
  b.lengths = std::move(lengths);
  for (std::size_t i = 0; i < B; ++i) {
    b.labels.push_back(static_cast<int>(rng() % 7));
    b.videoIds.push_back("v" + std::to_string(i));
    b.blockIndices.push_back(0);
  }
  return b;
}

void randomizeParams(nn::ParameterStore &store, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> d(-0.8, 0.8);
  for (auto *p : store.trainable())
    for (double &v : p->value.values())
      v = d(rng);
}

Dataset syntheticDataset(const tst::SyntheticSpec &spec, std::uint64_t seed,
                         std::size_t L) {
  Dataset d;
  for (const auto &v : tst::syntheticVideos(spec, seed, "s" + std::to_string(seed))) {
    auto blocks = seq::blockSequence(v, L);
    d.blocks.insert(d.blocks.end(), blocks.begin(), blocks.end());
    ++d.videos;
  }
  d.visualDim = spec.dim;
  return d;
}

} // namespace

TEST(BuildModel, FusionWidthsAtFullDims) {
  ModelConfig c2 = fusionConfig(2);
  c2.audioHiddenSize = 64;
  c2.hiddenSize = 2;
  EXPECT_EQ(Model(c2, 4096, 112, 1).fusionInputWidth(), 4096u + 64u);

  ModelConfig c4 = fusionConfig(4);
  c4.hiddenSize = 128;
  c4.audioHiddenSize = 64;
  Model m4(c4, 8, 112, 1);
  EXPECT_EQ(m4.fusionInputWidth(), 192u);
  EXPECT_EQ(m4.params().find("fusion_gru/l0_W_z")->value.shape(), (Shape{192, 128}));

  ModelConfig c1 = fusionConfig(1);
  EXPECT_EQ(Model(c1, 10, 112, 1).fusionInputWidth(), 122u);
  ModelConfig cb = fusionConfig(4);
  cb.bidirectional = true;
  EXPECT_EQ(Model(cb, 10, 7, 1).fusionInputWidth(), 2u * (5 + 3));
}

TEST(BuildModel, AudioFfnParameterCount) {
  ModelConfig c;
  c.kind = ModelKind::kAudioFfn;
  Model m(c, 0, 6552, 1);
  EXPECT_EQ(m.params().trainableCount(), 6552u * 1024 + 1024 + 1024 * 7 + 7);
  EXPECT_EQ(m.params().groups(), (std::vector<std::string>{"ffn", "classifier"}));
}

TEST(BuildModel, ModalityMismatchRejected) {
  EXPECT_THROW(Model(fusionConfig(1), 4, 0, 1), ConfigError);
  ModelConfig v;
  EXPECT_THROW(Model(v, 0, 5, 1), ConfigError);
  Model vis(v, 4, 0, 1);
  std::mt19937_64 rng(1);
  auto batch = randomBatch(2, 3, 5, 0, {3, 3}, rng);
  Tape tape;
  EXPECT_THROW(vis.frameLogits(tape, batch, nn::Mode::kEval, 0), ShapeError);
}

TEST(BuildModel, FrozenVisualGruIsNotTrainable) {
  ModelConfig c = fusionConfig(4);
  c.freezeVisualGru = true;
  Model m(c, 4, 3, 1);
  auto groups = m.params().groups();
  EXPECT_EQ(std::count(groups.begin(), groups.end(), "visual_gru"), 0);
  EXPECT_FALSE(m.params().find("visual_gru/l0_W_z")->requiresGrad);
}

TEST(Aggregate, SingleFrameIsIdentity) {
  std::mt19937_64 rng(3);
  Tape tape;
  Tensor x = randomTensor({4, 1, 7}, rng);
  const std::vector<std::size_t> lens(4, 1);
  for (auto r : {ad::Reduction::kMean, ad::Reduction::kMedian})
    for (auto m : {ClassifyMode::kExactSequence, ClassifyMode::kPaddedSequence})
      EXPECT_EQ(aggregateLogits(tape.constant(x), lens, m, r).value(),
                x.reshaped({4, 7}));
}

TEST(Aggregate, ExactSequenceIgnoresGarbagePadding) {
  std::mt19937_64 rng(4);
  Tensor x = randomTensor({2, 5, 7}, rng);
  const std::size_t lens[] = {2, 5};
  Tape tape;
  Tensor clean = aggregateLogits(tape.constant(x), lens, ClassifyMode::kExactSequence,
                                 ad::Reduction::kMean)
                     .value();
  for (std::size_t t = 2; t < 5; ++t)
    for (std::size_t c = 0; c < 7; ++c)
      x.at(0, t, c) = 1e6 * (static_cast<double>(t) - 7.5);
  Tensor garbage = aggregateLogits(tape.constant(x), lens,
                                   ClassifyMode::kExactSequence, ad::Reduction::kMean)
                       .value();
  EXPECT_EQ(clean, garbage);
  EXPECT_DOUBLE_EQ(clean.at(0, 3), (x.at(0, 0, 3) + x.at(0, 1, 3)) / 2.0);
}

TEST(Aggregate, ThreeRowBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = randomTensor({1, 3, 7}, rng);
    const std::size_t lens[] = {3};
    Tape tape;
    Tensor mean = aggregateLogits(tape.constant(x), lens,
                                  ClassifyMode::kPaddedSequence, ad::Reduction::kMean)
                      .value();
    Tensor med = aggregateLogits(tape.constant(x), lens,
                                 ClassifyMode::kExactSequence, ad::Reduction::kMedian)
                     .value();
    for (std::size_t c = 0; c < 7; ++c) {
      double col[3] = {x.at(0, 0, c), x.at(0, 1, c), x.at(0, 2, c)};
      EXPECT_NEAR(mean.at(0, c), (col[0] + col[1] + col[2]) / 3.0, 1e-12);
      std::sort(col, col + 3);
      EXPECT_NEAR(med.at(0, c), col[1], 1e-12);
    }
  }
}

TEST(Aggregate, EvenMedianAndConstantRows) {
  Tape tape;
  Tensor x(Shape{1, 4, 7});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 7; ++c)
      x.at(0, t, c) = static_cast<double>(t * t);
  const std::size_t lens[] = {4};
  auto med = aggregateLogits(tape.constant(x), lens, ClassifyMode::kExactSequence,
                             ad::Reduction::kMedian);
  EXPECT_EQ(med.value().at(0, 0), 2.5); // mean of 1 and 4

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor row = randomTensor({7}, rng);
    std::size_t T = 1 + rng() % 9;
    Tensor c(Shape{1, T, 7});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < 7; ++k)
        c.at(0, t, k) = row[k];
    const std::size_t l[] = {T};
    EXPECT_EQ(aggregateLogits(tape.constant(c), l, ClassifyMode::kExactSequence,
                              ad::Reduction::kMean)
                  .value(),
              aggregateLogits(tape.constant(c), l, ClassifyMode::kExactSequence,
                              ad::Reduction::kMedian)
                  .value());
  }
}

TEST(Aggregate, PerFrameIsAContractError) {
  Tape tape;
  const std::size_t lens[] = {1};
  EXPECT_THROW(aggregateLogits(tape.constant(Tensor(Shape{1, 1, 7})), lens,
                               ClassifyMode::kPerFrame, ad::Reduction::kMean),
               ContractError);
}

TEST(VideoPrediction, SingleBlockPassesThrough) {
  BlockPrediction b{"a", {0.1, -2, 3, 0, 0, 0, 1}, 2};
  auto recs = videoPredictions(std::span<const BlockPrediction>(&b, 1));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].logits, b.logits);
  EXPECT_EQ(recs[0].predicted, 2);
  EXPECT_EQ(recs[0].label, 2);
}

TEST(VideoPrediction, TieGoesToLowestClass) {
  std::vector<BlockPrediction> blocks{{"a", {1, 0, 0, 0, 0, 0, 0}, 1},
                                      {"a", {0, 1, 0, 0, 0, 0, 0}, 1}};
  auto recs = videoPredictions(blocks);
  EXPECT_EQ(recs[0].logits, (eval::Logits{0.5, 0.5, 0, 0, 0, 0, 0}));
  EXPECT_EQ(recs[0].predicted, 0);
}

TEST(VideoPrediction, ThreeBlockHandMean) {
  std::vector<BlockPrediction> blocks{{"x", {3, 0, 0, 0, 0, 0, 6}, std::nullopt},
                                      {"y", {1, 1, 1, 1, 1, 1, 1}, 4},
                                      {"x", {0, 3, 0, 0, 0, 0, -3}, std::nullopt},
                                      {"x", {0, 0, 6, 0, 0, 0, 0}, std::nullopt}};
  auto recs = videoPredictions(blocks);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].videoId, "x");
  EXPECT_EQ(recs[0].logits, (eval::Logits{1, 1, 2, 0, 0, 0, 1}));
  EXPECT_EQ(recs[0].predicted, 2);
  EXPECT_FALSE(recs[0].label.has_value());
  EXPECT_EQ(recs[1].predicted, 0);
}

namespace {

struct MaskingOutcome {
  Tensor logits;
  std::vector<Tensor> grads;
  Tensor inputGrad;
};

MaskingOutcome runMasked(Model &m, const seq::Batch &batch) {
  Tape tape;
  m.params().zeroGrad();
  Var vis = tape.input(batch.visual);
  Var fl = m.frameLogits(vis, Var(), batch.lengths, nn::Mode::kEval, 0);
  Var bl = m.blockLogits(fl, batch);
  tape.backward(ad::crossEntropy(bl, batch.labels));
  MaskingOutcome out{bl.value(), {}, tape.grad(vis)};
  for (auto *p : m.params().trainable())
    out.grads.push_back(p->grad);
  return out;
}

} // namespace

TEST(Masking, PaddedFramesChangeNothing) {
  for (bool bi : {false, true})
    for (bool att : {false, true}) {
      ModelConfig c;
      c.hiddenSize = 4;
      c.numLayers = 2;
      c.bidirectional = bi;
      c.attention = att;
      Model m(c, 3, 0, 11);
      std::mt19937_64 rng(12);
      randomizeParams(m.params(), rng);
      seq::Batch batch = randomBatch(3, 6, 3, 0, {2, 6, 4}, rng);
      MaskingOutcome a = runMasked(m, batch);
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t t = batch.lengths[b]; t < 6; ++t)
          for (std::size_t d = 0; d < 3; ++d)
            batch.visual.at(b, t, d) = 50.0 * (std::generate_canonical<double, 53>(rng) - 0.5);
      MaskingOutcome b = runMasked(m, batch);
      EXPECT_EQ(a.logits, b.logits);
      ASSERT_EQ(a.grads.size(), b.grads.size());
      for (std::size_t i = 0; i < a.grads.size(); ++i)
        EXPECT_EQ(a.grads[i], b.grads[i]);
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t t = 0; t < 6; ++t)
          for (std::size_t d = 0; d < 3; ++d)
            if (t >= batch.lengths[r]) {
              EXPECT_EQ(b.inputGrad.at(r, t, d), 0.0);
            }
    }
}

TEST(EarlyFusion, OptionThreeWithSilencedAudioIsVisualDense) {
  ModelConfig c = fusionConfig(3);
  const std::size_t dv = 4, da = 3;
  Model m(c, dv, da, 21);
  std::mt19937_64 rng(22);
  randomizeParams(m.params(), rng);
  for (auto *p : m.params().all())
    if (p->group == "audio_gru")
      p->value.fill(0.0);
  Parameter *w = m.params().find("classifier/W");
  Parameter *bias = m.params().find("classifier/b");
  for (std::size_t k = dv; k < w->value.dim(0); ++k)
    for (std::size_t j = 0; j < 7; ++j)
      w->value.at(k, j) = 0.0;
  seq::Batch batch = randomBatch(2, 5, dv, da, {5, 3}, rng);
  Tape tape;
  Tensor fused = m.frameLogits(tape, batch, nn::Mode::kEval, 0).value();

  Tensor wv(Shape{dv, 7});
  for (std::size_t k = 0; k < dv; ++k)
    for (std::size_t j = 0; j < 7; ++j)
      wv.at(k, j) = w->value.at(k, j);
  Var flat = ad::reshape(tape.constant(batch.visual), Shape{10, dv});
  Tensor visualOnly =
      ad::add(ad::matmul(flat, tape.constant(wv)), tape.constant(bias->value))
          .value()
          .reshaped({2, 5, 7});
  EXPECT_EQ(fused, visualOnly);
}

TEST(GradCheck, EveryKindAtReducedDims) {
  struct Case {
    ModelConfig cfg;
    std::size_t dv, da;
  };
  std::vector<Case> cases;
  ModelConfig ffn;
  ffn.kind = ModelKind::kAudioFfn;
  ffn.ffnHidden = 6;
  ffn.batchnorm = true;
  cases.push_back({ffn, 0, 9});
  ModelConfig agru;
  agru.kind = ModelKind::kAudioGru;
  agru.audioHiddenSize = 4;
  agru.audioNumLayers = 2;
  agru.attention = true;
  cases.push_back({agru, 0, 3});
  ModelConfig vis;
  vis.hiddenSize = 4;
  vis.bidirectional = true;
  vis.classifyMode = ClassifyMode::kPerFrame;
  cases.push_back({vis, 3, 0});
  for (int opt = 1; opt <= 4; ++opt) {
    ModelConfig f = fusionConfig(opt);
    f.reduction = opt % 2 ? ad::Reduction::kMean : ad::Reduction::kMedian;
    cases.push_back({f, 3, 2});
  }
  std::uint64_t seed = 30;
  for (auto &cs : cases) {
    Model m(cs.cfg, cs.dv, cs.da, seed);
    std::mt19937_64 rng(seed++);
    randomizeParams(m.params(), rng);
    const bool ffnCase = cs.cfg.kind == ModelKind::kAudioFfn;
    seq::Batch batch = randomBatch(3, ffnCase ? 1 : 4, cs.dv, cs.da,
                                   ffnCase ? std::vector<std::size_t>{1, 1, 1}
                                           : std::vector<std::size_t>{4, 2, 3},
                                   rng);
    auto report = ad::finiteDiffCheck(
        [&](Tape &t) { return m.loss(t, batch, nn::Mode::kEval, 0); },
        m.params().trainable());
    EXPECT_LE(report.maxRelError, 1e-4) << kindName(cs.cfg.kind) << " "
                                        << cs.cfg.fusionOption;
  }
}

TEST(Training, SyntheticSequencesLearnAndReplayExactly) {
  tst::SyntheticSpec spec;
  spec.videosPerClass = 8;
  spec.minLength = 6;
  spec.maxLength = 20;
  spec.dim = 8;
  spec.signalScale = 3.0;
  Dataset trainSet = syntheticDataset(spec, 1, 10);
  Dataset validSet = syntheticDataset(spec, 2, 10);
  ModelConfig c;
  c.hiddenSize = 12;
  c.numLayers = 1;
  c.bidirectional = true;
  c.sequenceLength = 10;
  TrainConfig tc;
  tc.batchSize = 8;
  tc.optimizer.schedule.initial = 0.01;
  tc.plan = optim::parsePlan("2:classifier;10:all");

  Model a(c, spec.dim, 0, 5), b(c, spec.dim, 0, 5);
  TrainResult ra = train(a, tc, trainSet, &validSet, 5);
  TrainResult rb = train(b, tc, trainSet, &validSet, 5);
  EXPECT_EQ(optim::historyCsv(ra.history), optim::historyCsv(rb.history));
  EXPECT_EQ(metricsCsv(ra.metrics), metricsCsv(rb.metrics));
  ASSERT_EQ(ra.history.size(), 12u);
  EXPECT_LT(ra.history.back().loss, ra.history.front().loss);
  ASSERT_EQ(ra.metrics.size(), 13u);
  EXPECT_EQ(ra.metrics.back().split, "train");
  EXPECT_GT(ra.metrics.back().accuracy, 0.8);
  EXPECT_GT(ra.metrics[11].accuracy, 0.5);

  // Post-training evaluation of the training split matches the logged row.
  auto recs = predict(a, trainSet);
  EXPECT_EQ(recs.size(), trainSet.videos);
  EXPECT_EQ(eval::computeMetrics(recs).accuracy, ra.metrics.back().accuracy);
  EXPECT_EQ(eval::formatPredictionLog(recs), eval::formatPredictionLog(predict(a, trainSet)));

  // A fresh model restored from the checkpoint predicts bit-identically.
  Model restored = Model::fromCheckpoint(a.checkpoint(), "memory");
  EXPECT_EQ(eval::formatPredictionLog(predict(restored, trainSet, 5)),
            eval::formatPredictionLog(recs));

  Model other(c, spec.dim, 0, 6);
  TrainResult rc = train(other, tc, trainSet, nullptr, 6);
  EXPECT_NE(optim::historyCsv(rc.history), optim::historyCsv(ra.history));
  EXPECT_EQ(rc.metrics.size(), 1u);
}

TEST(Training, AudioFfnSeparableFunctionals) {
  const std::size_t D = 6552;
  std::mt19937_64 rng(40);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> protos(7, std::vector<double>(D));
  for (auto &p : protos)
    for (double &v : p)
      v = g(rng);
  auto make = [&](std::size_t perClass, const std::string &prefix) {
    Dataset d;
    for (std::size_t i = 0; i < perClass; ++i)
      for (int c = 0; c < 7; ++c) {
        seq::LoadedVideo v{prefix + std::to_string(d.videos), c, Tensor(),
                           Tensor(Shape{1, D})};
        for (std::size_t k = 0; k < D; ++k)
          v.audio.at(0, k) = 0.2 * protos[c][k] + g(rng);
        d.blocks.push_back(seq::functionalBlock(v));
        ++d.videos;
      }
    d.audioDim = D;
    return d;
  };
  Dataset trainSet = make(10, "tr"), validSet = make(5, "va");
  ModelConfig c;
  c.kind = ModelKind::kAudioFfn;
  c.ffnHidden = 64;
  TrainConfig tc;
  tc.batchSize = 16;
  tc.optimizer.schedule.initial = 1e-3;
  tc.plan = optim::parsePlan("100:all");
  Model m(c, 0, D, 41);
  TrainResult r = train(m, tc, trainSet, &validSet, 41);
  EXPECT_GE(r.metrics[99].accuracy, 0.95);
}

TEST(Training, PerFrameAndUnlabelledRules) {
  tst::SyntheticSpec spec;
  spec.videosPerClass = 1;
  spec.minLength = 4;
  spec.maxLength = 9;
  spec.dim = 3;
  Dataset d = syntheticDataset(spec, 3, 4);
  ModelConfig c;
  c.hiddenSize = 3;
  c.numLayers = 1;
  c.classifyMode = ClassifyMode::kPerFrame;
  Model m(c, 3, 0, 1);
  TrainConfig tc;
  tc.plan = optim::parsePlan("1:all");
  EXPECT_NO_THROW(train(m, tc, d, nullptr, 1));
  d.blocks[0].label = seq::kNoLabel;
  EXPECT_THROW(train(m, tc, d, nullptr, 1), ValidationError);
  tc.plan = optim::parsePlan("1:nonexistent");
  d.blocks[0].label = 0;
  EXPECT_THROW(train(m, tc, d, nullptr, 1), ConfigError);
}

TEST(Drivers, TrainThenEvaluateFromDisk) {
  auto dir = scratchDir("pipeline_drivers");
  tst::SyntheticSpec spec;
  spec.videosPerClass = 3;
  spec.minLength = 5;
  spec.maxLength = 12;
  spec.dim = 4;
  auto trainManifest = tst::writeSyntheticCorpus(
      dir, tst::syntheticVideos(spec, 1, "tr"), "train.tsv");
  tst::writeSyntheticCorpus(dir, tst::syntheticVideos(spec, 2, "va"),
                                "valid.tsv");
  text::writeFile((dir / "run.cfg").string(),
                  "kind = visual_gru\nhidden_size = 6\nnum_layers = 1\n"
                  "sequence_length = 8\nbatch_size = 5\nlearning_rate = 0.01\n"
                  "stages = 3:all\ntrain_manifest = train.tsv\n"
                  "valid_manifest = valid.tsv\n");
  RunConfig cfg = readRunConfig((dir / "run.cfg").string());
  auto run1 = runTraining(cfg, 7, (dir / "out1").string());
  auto run2 = runTraining(cfg, 7, (dir / "out2").string());
  for (const char *f : {"history.csv", "metrics.csv", "checkpoint.txt"})
    EXPECT_EQ(text::readFile((dir / "out1" / f).string()),
              text::readFile((dir / "out2" / f).string()))
        << f;

  auto e1 = runEvaluation(run1.checkpointPath, trainManifest, (dir / "eval1").string());
  auto e2 = runEvaluation(run2.checkpointPath, trainManifest, (dir / "eval2").string());
  EXPECT_EQ(e1.records.size(), 21u);
  EXPECT_EQ(text::readFile((dir / "eval1" / "predictions.log").string()),
            text::readFile((dir / "eval2" / "predictions.log").string()));
  ASSERT_TRUE(e1.metrics.has_value());
  EXPECT_EQ(e1.metrics->accuracy, run1.result.metrics.back().accuracy);
  EXPECT_TRUE(std::filesystem::exists(dir / "eval1" / "metrics.txt"));

  spec.dim = 5;
  auto wide = tst::writeSyntheticCorpus(dir / "wide",
                                            tst::syntheticVideos(spec, 3, "w"), "w.tsv");
  EXPECT_THROW(runEvaluation(run1.checkpointPath, wide, (dir / "eval3").string()),
               ShapeError);
}
