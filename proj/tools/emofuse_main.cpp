// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the toolkit only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emofuse/emofuse.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Thrown after a failed C call; carries the one-line diagnostic.
struct Failure {
  std::string message;
};

void check(ef_status s) {
  if (s != EF_OK)
    throw Failure{std::string(ef_status_name(s)) + ": " + ef_last_error()};
}

struct StrFree {
  void operator()(char *s) const { ef_string_free(s); }
};
using OwnedStr = std::unique_ptr<char, StrFree>;
struct RecordsFree {
  void operator()(ef_records *r) const { ef_records_free(r); }
};
using Records = std::unique_ptr<ef_records, RecordsFree>;
struct TableFree {
  void operator()(ef_log_table *t) const { ef_logs_free(t); }
};
using Table = std::unique_ptr<ef_log_table, TableFree>;

Table loadTable(const std::vector<std::string> &paths) {
  std::vector<const char *> c;
  for (const auto &p : paths)
    c.push_back(p.c_str());
  ef_log_table *t = nullptr;
  check(ef_logs_load(c.data(), c.size(), &t));
  return Table(t);
}

/// Returns true when every record carries a label.
bool labelled(const ef_records *recs) {
  const std::size_t n = ef_records_count(recs);
  for (std::size_t i = 0; i < n; ++i) {
    int label = EF_NO_LABEL;
    check(ef_records_get(recs, i, nullptr, nullptr, nullptr, &label));
    if (label == EF_NO_LABEL)
      return false;
  }
  return n > 0;
}

void writeText(const std::filesystem::path &path, const std::string &text) {
  std::FILE *f = std::fopen(path.c_str(), "wb");
  if (!f || std::fwrite(text.data(), 1, text.size(), f) != text.size() ||
      std::fclose(f) != 0)
    throw Failure{"io error: cannot write " + path.string()};
}

struct Options {
  std::string config, out, manifest, clips, checkpoint, log;
  std::optional<std::uint64_t> seed;
  std::size_t bucketWidth = 10;
  int method = 2;
  std::vector<std::string> logs, weightsFrom;
  std::vector<double> modelWeights, classWeights;
  std::string classCountsFrom;
  bool rescale = false, countVotes = false;
  std::size_t folds = 5;
};

void runPrep(const Options &o) {
  ef_prep_summary sum{};
  char *warnings = nullptr;
  check(ef_prep(o.manifest.c_str(), o.clips.empty() ? nullptr : o.clips.c_str(),
                o.out.c_str(), &sum, &warnings));
  OwnedStr owned(warnings);
  std::cerr << warnings;
  std::cout << "videos\t" << sum.videos << "\nframes\t" << sum.frames
            << "\ndiscarded_clips\t" << sum.discarded_clips << "\n";
}

void runTrain(const Options &o) {
  ef_config *raw = nullptr;
  check(ef_config_load(o.config.c_str(), &raw));
  std::unique_ptr<ef_config, void (*)(ef_config *)> cfg(raw, ef_config_free);
  check(ef_train(cfg.get(), o.seed ? &*o.seed : nullptr, o.out.c_str()));
  std::cout << "wrote " << (std::filesystem::path(o.out) / "checkpoint.txt").string()
            << "\n";
}

void runEval(const Options &o) {
  ef_metrics m{};
  int has = 0;
  check(ef_evaluate(o.checkpoint.c_str(), o.manifest.c_str(), o.out.c_str(), &m, &has));
  if (has)
    std::printf("accuracy\t%.6f\nmacro_f1\t%.6f\n", m.accuracy, m.macro_f1);
  else
    std::printf("unlabelled split; wrote predictions only\n");
}

void runFuse(const Options &o) {
  Table table = loadTable(o.logs);
  Table source;
  if (!o.weightsFrom.empty())
    source = loadTable(o.weightsFrom);

  ef_fusion_spec spec{};
  spec.method = o.method;
  spec.rescale = o.rescale;
  spec.count_votes = o.countVotes;
  spec.folds = o.folds;
  if (!o.modelWeights.empty()) {
    spec.model_weights = o.modelWeights.data();
    spec.model_weight_count = o.modelWeights.size();
  }
  double classWeights[EF_NUM_CLASSES];
  if (!o.classWeights.empty()) {
    if (o.classWeights.size() != EF_NUM_CLASSES)
      throw Failure{"config error: --class-weights needs 7 values"};
    std::copy(o.classWeights.begin(), o.classWeights.end(), classWeights);
    spec.class_weights = classWeights;
  } else if (!o.classCountsFrom.empty()) {
    std::size_t counts[EF_NUM_CLASSES];
    check(ef_stats(o.classCountsFrom.c_str(), 1, counts, nullptr, nullptr));
    check(ef_class_weights(counts, classWeights));
    spec.class_weights = classWeights;
  }

  ef_records *raw = nullptr;
  double cv = -1.0;
  check(ef_fuse(table.get(), source.get(), &spec, &raw, &cv));
  Records fused(raw);
  if (o.method == 5)
    std::fprintf(stderr, "cv_accuracy\t%.6f\n", cv);

  if (o.out.empty()) {
    char *text = nullptr;
    check(ef_records_format(fused.get(), &text));
    OwnedStr owned(text);
    std::fputs(text, stdout);
    return;
  }
  std::filesystem::create_directories(o.out);
  const auto dir = std::filesystem::path(o.out);
  check(ef_records_write(fused.get(), (dir / "fused.log").c_str()));
  if (labelled(fused.get())) {
    char *report = nullptr;
    ef_metrics m{};
    check(ef_records_metrics(fused.get(), &m, &report));
    OwnedStr owned(report);
    writeText(dir / "metrics.txt", report);
    std::printf("accuracy\t%.6f\nmacro_f1\t%.6f\n", m.accuracy, m.macro_f1);
  }
}

void runSubmit(const Options &o) {
  ef_records *raw = nullptr;
  check(ef_records_read(o.log.c_str(), &raw));
  Records recs(raw);
  check(ef_records_submit(recs.get(), o.out.c_str()));
  std::cout << "wrote " << ef_records_count(recs.get()) << " files\n";
}

void runStats(const Options &o) {
  char *report = nullptr;
  check(ef_stats(o.manifest.c_str(), o.bucketWidth, nullptr, nullptr, &report));
  OwnedStr owned(report);
  std::fputs(report, stdout);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Sequence emotion classification toolkit"};
  app.require_subcommand(1);
  Options o;

  auto *prep = app.add_subcommand("prep", "validate a manifest and align audio clips");
  prep->add_option("--manifest", o.manifest, "frame manifest (TSV)")->required();
  prep->add_option("--clips", o.clips, "audio clip table (TSV: video, clip, path)");
  prep->add_option("--out", o.out, "output directory")->required();

  auto *train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", o.config, "run config file")->required();
  train->add_option("--seed", o.seed, "overrides the config seed");
  train->add_option("--out", o.out, "output directory")->required();
  train->footer(ef_config_help());

  auto *evalCmd = app.add_subcommand("eval", "predict a manifest with a checkpoint");
  evalCmd->add_option("--checkpoint", o.checkpoint, "checkpoint.txt from train")
      ->required();
  evalCmd->add_option("--manifest", o.manifest, "frame manifest (TSV)")->required();
  evalCmd->add_option("--out", o.out, "output directory")->required();

  auto *fuse = app.add_subcommand("fuse", "late fusion over prediction logs");
  fuse->add_option("--method", o.method, "fusion method 1..5")->required()
      ->check(CLI::Range(1, 5));
  fuse->add_option("--logs", o.logs, "comma-separated prediction logs")
      ->required()->delimiter(',');
  fuse->add_option("--weights-from", o.weightsFrom,
                   "logs (same model order) supplying accuracies and regression")
      ->delimiter(',');
  fuse->add_option("--model-weights", o.modelWeights, "explicit per-model weights")
      ->delimiter(',');
  fuse->add_option("--class-weights", o.classWeights, "7 class weights for method 4")
      ->delimiter(',');
  fuse->add_option("--class-counts-from", o.classCountsFrom,
                   "training manifest whose class counts give method 4's weights");
  fuse->add_flag("--rescale", o.rescale, "min-max rescale each model's logits");
  fuse->add_flag("--count-votes", o.countVotes, "method 3 counts argmax votes");
  fuse->add_option("--folds", o.folds, "method 5 cross-validation folds");
  fuse->add_option("--out", o.out, "output directory; stdout when absent");

  auto *submit = app.add_subcommand("submit", "write one label file per sample");
  submit->add_option("--log", o.log, "prediction log")->required();
  submit->add_option("--out", o.out, "output directory")->required();

  auto *stats = app.add_subcommand("stats", "class counts and length histogram");
  stats->add_option("--manifest", o.manifest, "frame manifest (TSV)")->required();
  stats->add_option("--bucket-width", o.bucketWidth, "length histogram bucket")
      ->check(CLI::PositiveNumber);

  // Set after the subcommands exist so only the top level and train show it.
  app.footer(ef_config_help());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "emofuse: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*prep)
      runPrep(o);
    else if (*train)
      runTrain(o);
    else if (*evalCmd)
      runEval(o);
    else if (*fuse)
      runFuse(o);
    else if (*submit)
      runSubmit(o);
    else if (*stats)
      runStats(o);
  } catch (const Failure &f) {
    std::cerr << "emofuse: " << f.message << "\n";
    return kExitFailure;
  } catch (const std::exception &e) {
    std::cerr << "emofuse: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
