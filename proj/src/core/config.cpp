// SPDX-License-Identifier: Apache-2.0
#include "emofuse/config.hpp"

#include <filesystem>
#include <functional>
#include <set>

#include "emofuse/error.hpp"
#include "emofuse/seqprep.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::pipe {

namespace {

using Setter = std::function<void(RunConfig &, std::string_view)>;

struct KeySpec {
  ConfigKeyDoc doc;
  bool model;
  Setter set;
};

[[noreturn]] void badValue(std::string_view key, std::string_view value,
                           std::string_view expect) {
  throw ConfigError("bad value '" + std::string(value) + "' for " +
                    std::string(key) + " (expected " + std::string(expect) + ")");
}

bool parseBool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1")
    return true;
  if (v == "false" || v == "0")
    return false;
  badValue(key, v, "true or false");
}

std::size_t parseCount(std::string_view key, std::string_view v) {
  auto n = text::parseInt(v);
  if (!n || *n <= 0)
    badValue(key, v, "a positive integer");
  return static_cast<std::size_t>(*n);
}

double parseReal(std::string_view key, std::string_view v) {
  auto d = text::parseDouble(v);
  if (!d)
    badValue(key, v, "a finite number");
  return *d;
}

ModelKind parseKind(std::string_view v) {
  if (v == "audio_ffn")
    return ModelKind::kAudioFfn;
  if (v == "audio_gru")
    return ModelKind::kAudioGru;
  if (v == "visual_gru")
    return ModelKind::kVisualGru;
  if (v == "early_fusion")
    return ModelKind::kEarlyFusion;
  badValue("kind", v, "audio_ffn, audio_gru, visual_gru or early_fusion");
}

ClassifyMode parseMode(std::string_view v) {
  if (v == "per_frame")
    return ClassifyMode::kPerFrame;
  if (v == "exact_sequence")
    return ClassifyMode::kExactSequence;
  if (v == "padded_sequence")
    return ClassifyMode::kPaddedSequence;
  badValue("classify_mode", v, "per_frame, exact_sequence or padded_sequence");
}

ad::Reduction parseReduction(std::string_view v) {
  if (v == "mean")
    return ad::Reduction::kMean;
  if (v == "median")
    return ad::Reduction::kMedian;
  badValue("reduction", v, "mean or median");
}

std::string boolName(bool b) { return b ? "true" : "false"; }

const std::vector<KeySpec> &keyTable() {
  static const std::vector<KeySpec> table = {
      {{"kind", "visual_gru", "audio_ffn | audio_gru | visual_gru | early_fusion"},
       true, [](RunConfig &c, std::string_view v) { c.model.kind = parseKind(v); }},
      {{"fusion_option", "1", "early_fusion wiring, 1..4"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.fusionOption = static_cast<int>(parseCount("fusion_option", v));
       }},
      {{"bidirectional", "false", "run every GRU stack in both directions"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.bidirectional = parseBool("bidirectional", v);
       }},
      {{"attention", "false", "sigmoid gate on the classifier input"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.attention = parseBool("attention", v);
       }},
      {{"hidden_size", "128", "units per visual/fusion GRU layer"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.hiddenSize = parseCount("hidden_size", v);
       }},
      {{"num_layers", "2", "visual/fusion GRU depth"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.numLayers = parseCount("num_layers", v);
       }},
      {{"audio_hidden_size", "64", "units per audio GRU layer"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.audioHiddenSize = parseCount("audio_hidden_size", v);
       }},
      {{"audio_num_layers", "4", "audio GRU depth"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.audioNumLayers = parseCount("audio_num_layers", v);
       }},
      {{"ffn_hidden", "1024", "audio_ffn hidden width"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.ffnHidden = parseCount("ffn_hidden", v);
       }},
      {{"batchnorm", "false", "audio_ffn: batch normalisation before the ReLU"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.batchnorm = parseBool("batchnorm", v);
       }},
      {{"dropout", "0.5 (audio_ffn) / 0", "dropout rate on the classifier input"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.dropout = parseReal("dropout", v);
       }},
      {{"sequence_length", "40", "block length L in frames"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.sequenceLength = parseCount("sequence_length", v);
       }},
      {{"classify_mode", "exact_sequence", "per_frame | exact_sequence | padded_sequence"},
       true,
       [](RunConfig &c, std::string_view v) { c.model.classifyMode = parseMode(v); }},
      {{"reduction", "mean", "mean | median; not allowed with per_frame"},
       true,
       [](RunConfig &c, std::string_view v) { c.model.reduction = parseReduction(v); }},
      {{"freeze_visual_gru", "false", "early_fusion option 4: hold the visual GRU fixed"},
       true,
       [](RunConfig &c, std::string_view v) {
         c.model.freezeVisualGru = parseBool("freeze_visual_gru", v);
       }},
      {{"batch_size", "4", "blocks per batch"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.batchSize = parseCount("batch_size", v);
       }},
      {{"optimizer", "adam", "adam | sgd"},
       false,
       [](RunConfig &c, std::string_view v) {
         if (v == "adam")
           c.train.optimizer.kind = optim::OptimizerKind::kAdam;
         else if (v == "sgd")
           c.train.optimizer.kind = optim::OptimizerKind::kSgd;
         else
           badValue("optimizer", v, "adam or sgd");
       }},
      {{"learning_rate", "1e-05", "initial learning rate"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.schedule.initial = parseReal("learning_rate", v);
       }},
      {{"lr_decay", "0.95", "multiplicative decay per interval"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.schedule.decay = parseReal("lr_decay", v);
       }},
      {{"lr_decay_steps", "5000", "decay interval in optimizer steps"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.schedule.interval = parseCount("lr_decay_steps", v);
       }},
      {{"staircase", "true", "integer (true) or continuous (false) decay exponent"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.schedule.staircase = parseBool("staircase", v);
       }},
      {{"beta1", "0.9", "Adam first-moment decay"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.adam.beta1 = parseReal("beta1", v);
       }},
      {{"beta2", "0.999", "Adam second-moment decay"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.adam.beta2 = parseReal("beta2", v);
       }},
      {{"epsilon", "1e-08", "Adam denominator offset"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.optimizer.adam.epsilon = parseReal("epsilon", v);
       }},
      {{"stages", "30:all", "epochs:groups per stage, e.g. 10:visual_gru+classifier;20:all"},
       false,
       [](RunConfig &c, std::string_view v) {
         c.train.plan = optim::parsePlan(std::string(v));
       }},
      {{"seed", "0", "run seed; the --seed flag overrides it"},
       false,
       [](RunConfig &c, std::string_view v) {
         auto n = text::parseInt(v);
         if (!n || *n < 0)
           badValue("seed", v, "a non-negative integer");
         c.seed = static_cast<std::uint64_t>(*n);
       }},
      {{"train_manifest", "", "training manifest path"},
       false, [](RunConfig &c, std::string_view v) { c.trainManifest = v; }},
      {{"valid_manifest", "", "validation manifest path (optional)"},
       false, [](RunConfig &c, std::string_view v) { c.validManifest = v; }},
      {{"init_checkpoint", "", "checkpoint whose matching tensors seed the model"},
       false, [](RunConfig &c, std::string_view v) { c.initCheckpoint = v; }},
  };
  return table;
}

const KeySpec *findKey(std::string_view key) {
  for (const auto &k : keyTable())
    if (k.doc.key == key)
      return &k;
  return nullptr;
}

} // namespace

double ModelConfig::dropoutRate() const {
  if (dropout)
    return *dropout;
  return kind == ModelKind::kAudioFfn ? 0.5 : 0.0;
}

ad::Reduction ModelConfig::reductionOrMean() const {
  return reduction.value_or(ad::Reduction::kMean);
}

void ModelConfig::validate() const {
  if (kind == ModelKind::kEarlyFusion && (fusionOption < 1 || fusionOption > 4))
    throw ConfigError("fusion_option must be 1..4, got " +
                      std::to_string(fusionOption));
  if (classifyMode == ClassifyMode::kPerFrame && reduction)
    throw ConfigError("reduction cannot be combined with classify_mode = per_frame");
  const double rate = dropoutRate();
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout must lie in [0, 1)");
  if (kind == ModelKind::kAudioFfn && attention)
    throw ConfigError("attention applies to the sequence models only");
  if (kind != ModelKind::kAudioFfn && batchnorm)
    throw ConfigError("batchnorm applies to audio_ffn only");
  if (freezeVisualGru && !(kind == ModelKind::kEarlyFusion && fusionOption == 4))
    throw ConfigError("freeze_visual_gru needs kind = early_fusion with fusion_option = 4");
  if (hiddenSize == 0 || numLayers == 0 || audioHiddenSize == 0 ||
      audioNumLayers == 0 || ffnHidden == 0 || sequenceLength == 0)
    throw ConfigError("model sizes must be positive");
}

optim::OptimizerConfig TrainConfig::defaultOptimizer() {
  optim::OptimizerConfig cfg;
  cfg.schedule.initial = 1e-5;
  cfg.schedule.decay = 0.95;
  cfg.schedule.interval = 5000;
  return cfg;
}

std::span<const ConfigKeyDoc> configKeys() {
  static const std::vector<ConfigKeyDoc> docs = [] {
    std::vector<ConfigKeyDoc> d;
    for (const auto &k : keyTable())
      d.push_back(k.doc);
    return d;
  }();
  return docs;
}

std::string configHelp() {
  std::size_t width = 0;
  for (const auto &d : configKeys())
    width = std::max(width, d.key.size());
  std::string out = "Run configuration keys (key = value):\n";
  for (const auto &d : configKeys()) {
    out += "  " + std::string(d.key) + std::string(width - d.key.size() + 2, ' ');
    out += std::string(d.help);
    if (!d.fallback.empty())
      out += " [default: " + std::string(d.fallback) + "]";
    out += "\n";
  }
  return out;
}

RunConfig parseRunConfig(std::string_view text, const std::string &origin,
                         const std::string &baseDir) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  auto lines = text::split(text, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(origin, ln + 1, "expected key = value");
    const std::string_view key = text::trim(line.substr(0, eq));
    const std::string_view value = text::trim(line.substr(eq + 1));
    const KeySpec *spec = findKey(key);
    if (!spec)
      throw FormatError(origin, ln + 1, "unknown key '" + std::string(key) + "'");
    if (!seen.emplace(key).second)
      throw FormatError(origin, ln + 1, "repeated key '" + std::string(key) + "'");
    try {
      spec->set(cfg, value);
    } catch (const ConfigError &e) {
      throw FormatError(origin, ln + 1, e.what());
    }
  }
  for (std::string *p : {&cfg.trainManifest, &cfg.validManifest, &cfg.initCheckpoint})
    if (!p->empty())
      *p = seq::resolvePath(baseDir, *p);
  cfg.model.validate();
  return cfg;
}

RunConfig readRunConfig(const std::string &path) {
  return parseRunConfig(text::readFile(path), path,
                        std::filesystem::path(path).parent_path().string());
}

std::string_view kindName(ModelKind kind) {
  switch (kind) {
  case ModelKind::kAudioFfn:
    return "audio_ffn";
  case ModelKind::kAudioGru:
    return "audio_gru";
  case ModelKind::kVisualGru:
    return "visual_gru";
  case ModelKind::kEarlyFusion:
    return "early_fusion";
  }
  return "?";
}

std::string_view modeName(ClassifyMode mode) {
  switch (mode) {
  case ClassifyMode::kPerFrame:
    return "per_frame";
  case ClassifyMode::kExactSequence:
    return "exact_sequence";
  case ClassifyMode::kPaddedSequence:
    return "padded_sequence";
  }
  return "?";
}

std::vector<std::pair<std::string, std::string>>
modelConfigPairs(const ModelConfig &c) {
  std::vector<std::pair<std::string, std::string>> out = {
      {"kind", std::string(kindName(c.kind))},
      {"fusion_option", std::to_string(c.fusionOption)},
      {"bidirectional", boolName(c.bidirectional)},
      {"attention", boolName(c.attention)},
      {"hidden_size", std::to_string(c.hiddenSize)},
      {"num_layers", std::to_string(c.numLayers)},
      {"audio_hidden_size", std::to_string(c.audioHiddenSize)},
      {"audio_num_layers", std::to_string(c.audioNumLayers)},
      {"ffn_hidden", std::to_string(c.ffnHidden)},
      {"batchnorm", boolName(c.batchnorm)},
      {"sequence_length", std::to_string(c.sequenceLength)},
      {"classify_mode", std::string(modeName(c.classifyMode))},
      {"freeze_visual_gru", boolName(c.freezeVisualGru)},
  };
  if (c.dropout)
    out.emplace_back("dropout", text::formatDouble(*c.dropout));
  if (c.reduction)
    out.emplace_back("reduction",
                     *c.reduction == ad::Reduction::kMean ? "mean" : "median");
  return out;
}

ModelConfig modelConfigFromPairs(
    std::span<const std::pair<std::string, std::string>> pairs,
    const std::string &origin) {
  RunConfig cfg;
  for (const auto &[key, value] : pairs) {
    const KeySpec *spec = findKey(key);
    if (!spec || !spec->model)
      throw ConfigError(origin + ": unexpected model key '" + key + "'");
    spec->set(cfg, value);
  }
  cfg.model.validate();
  return cfg.model;
}

} // namespace emofuse::pipe
