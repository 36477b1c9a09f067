// SPDX-License-Identifier: Apache-2.0
#include "emofuse/pipelines.hpp"

#include <filesystem>
#include <unordered_map>

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::pipe {

namespace fs = std::filesystem;
using seq::kNumClasses;

std::uint64_t mixSeed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool usesVisual(const ModelConfig &cfg) {
  return cfg.kind == ModelKind::kVisualGru || cfg.kind == ModelKind::kEarlyFusion;
}

seq::AudioKind audioKind(const ModelConfig &cfg) {
  switch (cfg.kind) {
  case ModelKind::kAudioFfn:
    return seq::AudioKind::kFunctional;
  case ModelKind::kAudioGru:
  case ModelKind::kEarlyFusion:
    return seq::AudioKind::kFrames;
  case ModelKind::kVisualGru:
    break;
  }
  return seq::AudioKind::kNone;
}

Dataset buildDataset(const ModelConfig &cfg,
                     const std::vector<seq::VideoSequence> &videos,
                     seq::FeatureLoader &loader) {
  Dataset d;
  for (const auto &v : videos) {
    seq::LoadedVideo lv = loader.load(v, usesVisual(cfg), audioKind(cfg));
    if (cfg.kind == ModelKind::kAudioFfn) {
      d.blocks.push_back(seq::functionalBlock(lv));
    } else {
      auto blocks = seq::blockSequence(lv, cfg.sequenceLength);
      std::move(blocks.begin(), blocks.end(), std::back_inserter(d.blocks));
    }
    ++d.videos;
  }
  d.visualDim = loader.visualDim();
  d.audioDim = loader.audioDim();
  return d;
}

Dataset loadDataset(const ModelConfig &cfg, const std::string &manifestPath) {
  auto videos = seq::parseManifest(manifestPath);
  seq::FeatureLoader loader(fs::path(manifestPath).parent_path().string());
  return buildDataset(cfg, videos, loader);
}

std::size_t Model::GruStack::width() const {
  return forward.hiddenSize * (bidirectional ? 2 : 1);
}

Model::GruStack Model::makeStack(const std::string &prefix,
                                 const std::string &group, std::size_t in,
                                 std::size_t hidden, std::size_t layers,
                                 std::mt19937_64 &rng) {
  GruStack s;
  s.bidirectional = cfg_.bidirectional;
  if (s.bidirectional) {
    s.forward = nn::makeGru(*store_, prefix + "/fw", group, in, hidden, layers, rng);
    s.backward = nn::makeGru(*store_, prefix + "/bw", group, in, hidden, layers, rng);
  } else {
    s.forward = nn::makeGru(*store_, prefix, group, in, hidden, layers, rng);
  }
  return s;
}

Var Model::runStack(Var x, std::span<const std::size_t> lengths,
                    const GruStack &s) {
  return s.bidirectional ? nn::bigruForward(x, lengths, s.forward, s.backward)
                         : nn::gruForward(x, lengths, s.forward);
}

Model::Model(ModelConfig cfg, std::size_t visualDim, std::size_t audioDim,
             std::uint64_t seed)
    : cfg_(std::move(cfg)), visualDim_(visualDim), audioDim_(audioDim),
      store_(std::make_unique<nn::ParameterStore>()) {
  cfg_.validate();
  if (usesVisual(cfg_) && visualDim_ == 0)
    throw ConfigError(std::string(kindName(cfg_.kind)) + " needs visual features");
  if (audioKind(cfg_) != seq::AudioKind::kNone && audioDim_ == 0)
    throw ConfigError(std::string(kindName(cfg_.kind)) + " needs audio features");
  std::mt19937_64 rng(seed);
  const auto act = nn::Activation::kNone;
  std::size_t k = 0; // classifier input width

  switch (cfg_.kind) {
  case ModelKind::kAudioFfn:
    hidden_ = nn::makeDense(*store_, "ffn/hidden", "ffn", audioDim_, cfg_.ffnHidden,
                            cfg_.batchnorm ? act : nn::Activation::kRelu, rng);
    if (cfg_.batchnorm)
      bn_ = nn::makeBatchNorm(*store_, "ffn/bn", "ffn", cfg_.ffnHidden);
    k = cfg_.ffnHidden;
    break;
  case ModelKind::kAudioGru:
    audioGru_ = makeStack("audio_gru", "audio_gru", audioDim_, cfg_.audioHiddenSize,
                          cfg_.audioNumLayers, rng);
    k = audioGru_->width();
    break;
  case ModelKind::kVisualGru:
    visualGru_ = makeStack("visual_gru", "visual_gru", visualDim_, cfg_.hiddenSize,
                           cfg_.numLayers, rng);
    k = visualGru_->width();
    break;
  case ModelKind::kEarlyFusion: {
    std::size_t left = visualDim_, right = audioDim_;
    if (cfg_.fusionOption == 4) {
      visualGru_ = makeStack("visual_gru", "visual_gru", visualDim_,
                             cfg_.hiddenSize, cfg_.numLayers, rng);
      left = visualGru_->width();
      if (cfg_.freezeVisualGru)
        for (Parameter *p : store_->all())
          if (p->group == "visual_gru")
            p->requiresGrad = false;
    }
    if (cfg_.fusionOption >= 2) {
      audioGru_ = makeStack("audio_gru", "audio_gru", audioDim_,
                            cfg_.audioHiddenSize, cfg_.audioNumLayers, rng);
      right = audioGru_->width();
    }
    fusionWidth_ = left + right;
    if (cfg_.fusionOption == 3) {
      k = fusionWidth_;
    } else {
      fusionGru_ = makeStack("fusion_gru", "fusion_gru", fusionWidth_,
                             cfg_.hiddenSize, cfg_.numLayers, rng);
      k = fusionGru_->width();
    }
    break;
  }
  }
  if (cfg_.attention)
    attention_ = nn::makeAttention(*store_, "attention", "attention", k, rng);
  classifier_ = nn::makeDense(*store_, "classifier", "classifier", k, kNumClasses,
                              act, rng);
}

namespace {

void checkWidth(Var x, std::size_t want, const char *what) {
  if (!x.valid() || x.shape().size() != 3 || x.shape()[2] != want)
    throw ShapeError(std::string(what) + " input " +
                     (x.valid() ? shapeToString(x.shape()) : std::string("(none)")) +
                     " does not match model width " + std::to_string(want));
}

} // namespace

Var Model::frameLogits(Tape &tape, const seq::Batch &batch, nn::Mode mode,
                       std::uint64_t seed) {
  Var visual, audio;
  if (usesVisual(cfg_))
    visual = tape.constant(batch.visual);
  if (audioKind(cfg_) != seq::AudioKind::kNone)
    audio = tape.constant(batch.audio);
  return frameLogits(visual, audio, batch.lengths, mode, seed);
}

Var Model::frameLogits(Var visual, Var audio,
                       std::span<const std::size_t> lengths, nn::Mode mode,
                       std::uint64_t seed) {
  if (usesVisual(cfg_))
    checkWidth(visual, visualDim_, "visual");
  if (audioKind(cfg_) != seq::AudioKind::kNone)
    checkWidth(audio, audioDim_, "audio");
  const std::size_t B = lengths.size();
  const double rate = cfg_.dropoutRate();
  auto maybeDropout = [&](Var x) {
    return rate > 0.0 ? nn::dropoutForward(x, {rate, mode}, seed) : x;
  };

  if (cfg_.kind == ModelKind::kAudioFfn) {
    Var h = nn::denseForward(ad::reshape(audio, Shape{B, audioDim_}), hidden_);
    if (bn_) {
      // A one-row batch has no batch statistics; it uses the running ones.
      const nn::Mode bnMode = mode == nn::Mode::kTrain && B >= 2
                                  ? nn::Mode::kTrain
                                  : nn::Mode::kEval;
      h = ad::relu(nn::batchnormForward(h, *bn_, bnMode));
    }
    Var y = nn::denseForward(maybeDropout(h), classifier_);
    return ad::reshape(y, Shape{B, 1, kNumClasses});
  }

  Var rep;
  switch (cfg_.kind) {
  case ModelKind::kAudioGru:
    rep = runStack(audio, lengths, *audioGru_);
    break;
  case ModelKind::kVisualGru:
    rep = runStack(visual, lengths, *visualGru_);
    break;
  default: {
    Var left = visualGru_ ? runStack(visual, lengths, *visualGru_) : visual;
    Var right = audioGru_ ? runStack(audio, lengths, *audioGru_) : audio;
    const Var parts[] = {left, right};
    rep = ad::concat(parts, 2);
    if (fusionGru_)
      rep = runStack(rep, lengths, *fusionGru_);
    break;
  }
  }
  if (attention_)
    rep = nn::attentionGate(rep, rep, *attention_);
  return nn::denseForwardSeq(maybeDropout(rep), classifier_);
}

Var aggregateLogits(Var frameLogits, std::span<const std::size_t> lengths,
                    ClassifyMode mode, ad::Reduction reduction) {
  const Shape s = frameLogits.shape();
  if (s.size() != 3)
    throw ShapeError("frame logits must be [B x T x C], got " + shapeToString(s));
  switch (mode) {
  case ClassifyMode::kPerFrame:
    throw ContractError("per_frame mode does not aggregate frame logits");
  case ClassifyMode::kExactSequence:
    return ad::reduceTime(frameLogits, lengths, reduction);
  case ClassifyMode::kPaddedSequence: {
    const std::vector<std::size_t> full(s[0], s[1]);
    return ad::reduceTime(frameLogits, full, reduction);
  }
  }
  throw ContractError("unknown classify mode");
}

Var Model::blockLogits(Var frameLogits, const seq::Batch &batch) const {
  if (cfg_.classifyMode == ClassifyMode::kPerFrame)
    return ad::reduceTime(frameLogits, batch.lengths, ad::Reduction::kMean);
  return aggregateLogits(frameLogits, batch.lengths, cfg_.classifyMode,
                         cfg_.reductionOrMean());
}

Var Model::loss(Tape &tape, const seq::Batch &batch, nn::Mode mode,
                std::uint64_t seed, Tensor *blockOut) {
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.labels[i] < 0)
      throw ValidationError("cannot train on unlabelled video " + batch.videoIds[i]);
  Var fl = frameLogits(tape, batch, mode, seed);
  Var bl = blockLogits(fl, batch);
  if (blockOut)
    *blockOut = bl.value();
  if (cfg_.classifyMode != ClassifyMode::kPerFrame)
    return ad::crossEntropy(bl, batch.labels);

  // Every valid frame carries its video's label; padded frames are left out.
  const std::size_t B = batch.size(), T = fl.shape()[1];
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      rows.push_back(b * T + t);
      labels.push_back(batch.labels[b]);
    }
  Var flat = ad::reshape(fl, Shape{B * T, kNumClasses});
  return ad::crossEntropy(ad::gatherRows(flat, rows), labels);
}

Checkpoint Model::checkpoint() const {
  auto pairs = modelConfigPairs(cfg_);
  pairs.emplace_back("visual_dim", std::to_string(visualDim_));
  pairs.emplace_back("audio_dim", std::to_string(audioDim_));
  return snapshot(*store_, std::move(pairs));
}

Model Model::fromCheckpoint(const Checkpoint &ck, const std::string &origin) {
  std::vector<std::pair<std::string, std::string>> modelPairs;
  std::optional<std::size_t> dv, da;
  for (const auto &[key, value] : ck.config) {
    if (key == "visual_dim" || key == "audio_dim") {
      auto n = text::parseInt(value);
      if (!n || *n < 0)
        throw ConfigError(origin + ": bad " + key + " '" + value + "'");
      (key == "visual_dim" ? dv : da) = static_cast<std::size_t>(*n);
    } else {
      modelPairs.emplace_back(key, value);
    }
  }
  if (!dv || !da)
    throw ConfigError(origin + ": checkpoint lacks feature dimensions");
  Model m(modelConfigFromPairs(modelPairs, origin), *dv, *da, 0);
  restore(m.params(), ck);
  return m;
}

std::size_t Model::initFrom(const Checkpoint &ck) {
  std::size_t copied = 0;
  for (const auto &[name, tensor] : ck.tensors) {
    Parameter *p = store_->find(name);
    if (p && p->value.shape() == tensor.shape()) {
      p->value = tensor;
      ++copied;
    }
  }
  return copied;
}

std::vector<eval::PredictionRecord>
videoPredictions(std::span<const BlockPrediction> blocks) {
  struct Acc {
    eval::Logits sum{};
    std::size_t n = 0;
    std::optional<int> label;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Acc> acc;
  for (const auto &b : blocks) {
    auto [it, fresh] = acc.try_emplace(b.videoId);
    if (fresh) {
      order.push_back(b.videoId);
      it->second.label = b.label;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c)
      it->second.sum[c] += b.logits[c];
    ++it->second.n;
  }
  std::vector<eval::PredictionRecord> out;
  out.reserve(order.size());
  for (const auto &id : order) {
    const Acc &a = acc.at(id);
    eval::Logits mean;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      mean[c] = a.sum[c] / static_cast<double>(a.n);
    out.push_back(eval::makeRecord(id, mean, a.label));
  }
  return out;
}

std::vector<eval::PredictionRecord> predict(Model &model, const Dataset &data,
                                            std::size_t batchSize) {
  seq::BatchIterator it(data.blocks, batchSize, false, 0);
  std::vector<BlockPrediction> blocks;
  blocks.reserve(data.blocks.size());
  while (auto batch = it.next()) {
    Tape tape;
    Var fl = model.frameLogits(tape, *batch, nn::Mode::kEval, 0);
    const Tensor &bl = model.blockLogits(fl, *batch).value();
    for (std::size_t b = 0; b < batch->size(); ++b) {
      BlockPrediction p;
      p.videoId = batch->videoIds[b];
      for (std::size_t c = 0; c < kNumClasses; ++c)
        p.logits[c] = bl.at(b, c);
      if (batch->labels[b] != seq::kNoLabel)
        p.label = batch->labels[b];
      blocks.push_back(std::move(p));
    }
  }
  return videoPredictions(blocks);
}

TrainResult train(Model &model, const TrainConfig &cfg, const Dataset &trainSet,
                  const Dataset *validSet, std::uint64_t seed) {
  if (trainSet.blocks.empty())
    throw ValidationError("training set is empty");
  TrainResult result;
  seq::BatchIterator it(trainSet.blocks, cfg.batchSize, true, seed);
  std::uint64_t batchCounter = 0;
  const std::uint64_t dropoutSeed = mixSeed(seed, 0xD0);

  optim::TrainingTask task;
  task.params = &model.params();
  task.beginEpoch = [&](std::size_t epoch) {
    it.reset(mixSeed(seed, epoch));
    return it.batchCount();
  };
  task.runBatch = [&](std::size_t index) {
    const seq::Batch batch = it.batch(index);
    Tape tape;
    Tensor bl;
    Var l = model.loss(tape, batch, nn::Mode::kTrain,
                       mixSeed(dropoutSeed, ++batchCounter), &bl);
    tape.backward(l);
    optim::BatchOutcome out;
    out.loss = l.value().item();
    out.count = batch.size();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::span<const double> row(bl.data().data() + b * kNumClasses, kNumClasses);
      out.correct += eval::argmax(row) == batch.labels[b];
    }
    return out;
  };
  task.endEpoch = [&](const optim::HistoryRow &row) {
    if (!validSet)
      return;
    auto recs = predict(model, *validSet);
    auto m = eval::computeMetrics(recs);
    result.metrics.push_back({row.epoch, "valid", m.accuracy, m.macroF1});
  };
  result.history = optim::runStagedTraining(task, cfg.plan, cfg.optimizer);
  auto recs = predict(model, trainSet);
  auto m = eval::computeMetrics(recs);
  result.metrics.push_back({cfg.plan.totalEpochs(), "train", m.accuracy, m.macroF1});
  return result;
}

std::string metricsCsv(std::span<const EpochMetrics> rows) {
  std::string out = "epoch,split,accuracy,macro_f1\n";
  for (const auto &r : rows)
    out += std::to_string(r.epoch) + "," + r.split + "," +
           text::formatDouble(r.accuracy) + "," + text::formatDouble(r.macroF1) +
           "\n";
  return out;
}

namespace {

void ensureDir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir + ": " + ec.message());
}

void checkDims(const Dataset &d, const Model &m, const std::string &what) {
  if ((usesVisual(m.config()) && d.visualDim != m.visualDim()) ||
      (audioKind(m.config()) != seq::AudioKind::kNone && d.audioDim != m.audioDim()))
    throw ShapeError(what + " features are " + std::to_string(d.visualDim) +
                     " visual / " + std::to_string(d.audioDim) +
                     " audio wide; the model expects " +
                     std::to_string(m.visualDim()) + " / " +
                     std::to_string(m.audioDim()));
}

} // namespace

TrainRun runTraining(const RunConfig &cfg, std::uint64_t seed,
                     const std::string &outDir) {
  if (cfg.trainManifest.empty())
    throw ConfigError("train_manifest is not set");
  const Dataset trainSet = loadDataset(cfg.model, cfg.trainManifest);
  std::optional<Dataset> validSet;
  if (!cfg.validManifest.empty())
    validSet = loadDataset(cfg.model, cfg.validManifest);

  Model model(cfg.model, trainSet.visualDim, trainSet.audioDim, seed);
  if (validSet)
    checkDims(*validSet, model, "validation");
  if (!cfg.initCheckpoint.empty() &&
      model.initFrom(readCheckpoint(cfg.initCheckpoint)) == 0)
    throw ConfigError("init_checkpoint " + cfg.initCheckpoint +
                      " shares no tensors with this model");

  TrainRun run;
  run.result = train(model, cfg.train, trainSet, validSet ? &*validSet : nullptr, seed);
  ensureDir(outDir);
  run.checkpointPath = (fs::path(outDir) / "checkpoint.txt").string();
  writeCheckpoint(run.checkpointPath, model.checkpoint());
  text::writeFile((fs::path(outDir) / "history.csv").string(),
                  optim::historyCsv(run.result.history));
  text::writeFile((fs::path(outDir) / "metrics.csv").string(),
                  metricsCsv(run.result.metrics));
  return run;
}

EvalRun runEvaluation(const std::string &checkpointPath,
                      const std::string &manifestPath, const std::string &outDir) {
  Model model = Model::fromCheckpoint(readCheckpoint(checkpointPath), checkpointPath);
  const Dataset data = loadDataset(model.config(), manifestPath);
  checkDims(data, model, "evaluation");
  EvalRun run;
  run.records = predict(model, data);
  bool labelled = !run.records.empty();
  for (const auto &r : run.records)
    labelled = labelled && r.label.has_value();
  if (labelled)
    run.metrics = eval::computeMetrics(run.records);
  ensureDir(outDir);
  eval::writePredictionLog(run.records,
                           (fs::path(outDir) / "predictions.log").string());
  if (run.metrics)
    text::writeFile((fs::path(outDir) / "metrics.txt").string(),
                    eval::formatMetrics(*run.metrics));
  return run;
}

} // namespace emofuse::pipe
