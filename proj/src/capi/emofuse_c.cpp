// SPDX-License-Identifier: Apache-2.0
#include "emofuse/emofuse.h"

#include <array>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>
#include <vector>

#include "emofuse/config.hpp"
#include "emofuse/ensemble.hpp"
#include "emofuse/error.hpp"
#include "emofuse/metrics.hpp"
#include "emofuse/pipelines.hpp"
#include "emofuse/predlog.hpp"
#include "emofuse/seqprep.hpp"
#include "emofuse/textio.hpp"

namespace ef = emofuse;
namespace fs = std::filesystem;

struct ef_config {
  ef::pipe::RunConfig cfg;
};
struct ef_records {
  std::vector<ef::eval::PredictionRecord> recs;
};
struct ef_log_table {
  ef::fusion::LogTable table;
};

namespace {

thread_local std::string lastError;

struct BadArgument {
  std::string what;
};

ef_status statusOf(ef::ErrorKind k) {
  switch (k) {
  case ef::ErrorKind::kShape: return EF_ERR_SHAPE;
  case ef::ErrorKind::kValidation: return EF_ERR_VALIDATION;
  case ef::ErrorKind::kContract: return EF_ERR_CONTRACT;
  case ef::ErrorKind::kConfig: return EF_ERR_CONFIG;
  case ef::ErrorKind::kIo: return EF_ERR_IO;
  case ef::ErrorKind::kFormat: return EF_ERR_FORMAT;
  case ef::ErrorKind::kCoverage: return EF_ERR_COVERAGE;
  case ef::ErrorKind::kAlignment: return EF_ERR_ALIGNMENT;
  case ef::ErrorKind::kNumeric: return EF_ERR_NUMERIC;
  }
  return EF_ERR_INTERNAL;
}

/// Runs `body`, translating every exception into a status; no exception
/// crosses the C boundary.
template <class F> ef_status guarded(F &&body) {
  lastError.clear();
  try {
    body();
    return EF_OK;
  } catch (const ef::Error &e) {
    lastError = e.what();
    return statusOf(e.kind());
  } catch (const fs::filesystem_error &e) {
    lastError = e.what();
    return EF_ERR_IO;
  } catch (const BadArgument &e) {
    lastError = e.what;
    return EF_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc &) {
    lastError = "out of memory";
    return EF_ERR_INTERNAL;
  } catch (const std::exception &e) {
    lastError = e.what();
    return EF_ERR_INTERNAL;
  } catch (...) {
    lastError = "unknown failure";
    return EF_ERR_INTERNAL;
  }
}

template <class T> const T &need(const T *p, const char *name) {
  if (!p)
    throw BadArgument{std::string(name) + " is null"};
  return *p;
}

const char *needStr(const char *s, const char *name) {
  if (!s)
    throw BadArgument{std::string(name) + " is null"};
  return s;
}

char *dupString(const std::string &s) {
  char *out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void fillMetrics(const ef::eval::MetricsReport &r, ef_metrics *out) {
  if (!out)
    return;
  out->count = r.count;
  out->accuracy = r.accuracy;
  out->macro_f1 = r.macroF1;
  for (std::size_t i = 0; i < EF_NUM_CLASSES; ++i)
    for (std::size_t j = 0; j < EF_NUM_CLASSES; ++j)
      out->confusion[i][j] = r.confusion[i][j];
}

} // namespace

extern "C" {

const char *ef_version(void) { return "0.1.0"; }

const char *ef_status_name(ef_status s) {
  switch (s) {
  case EF_OK: return "ok";
  case EF_ERR_SHAPE: return "shape error";
  case EF_ERR_VALIDATION: return "validation error";
  case EF_ERR_CONTRACT: return "contract error";
  case EF_ERR_CONFIG: return "config error";
  case EF_ERR_IO: return "io error";
  case EF_ERR_FORMAT: return "format error";
  case EF_ERR_COVERAGE: return "coverage error";
  case EF_ERR_ALIGNMENT: return "alignment error";
  case EF_ERR_NUMERIC: return "numeric error";
  case EF_ERR_INVALID_ARGUMENT: return "invalid argument";
  case EF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char *ef_last_error(void) { return lastError.c_str(); }

const char *ef_class_name(int index) {
  if (index < 0 || index >= EF_NUM_CLASSES)
    return nullptr;
  return ef::seq::kClassNames[static_cast<std::size_t>(index)].data();
}

void ef_string_free(char *s) { delete[] s; }

ef_status ef_config_load(const char *path, ef_config **out) {
  return guarded([&] {
    need(out, "out");
    auto cfg = ef::pipe::readRunConfig(needStr(path, "path"));
    *out = new ef_config{std::move(cfg)};
  });
}

ef_status ef_config_parse(const char *text, const char *origin,
                          const char *base_dir, ef_config **out) {
  return guarded([&] {
    need(out, "out");
    auto cfg = ef::pipe::parseRunConfig(needStr(text, "text"),
                                        origin ? origin : "<config>",
                                        base_dir ? base_dir : ".");
    *out = new ef_config{std::move(cfg)};
  });
}

void ef_config_free(ef_config *cfg) { delete cfg; }

const char *ef_config_help(void) {
  static const std::string help = ef::pipe::configHelp();
  return help.c_str();
}

ef_status ef_prep(const char *manifest, const char *clip_table,
                  const char *out_dir, ef_prep_summary *summary, char **warnings) {
  return guarded([&] {
    auto videos = ef::seq::parseManifest(needStr(manifest, "manifest"));
    std::vector<std::string> notes;
    std::size_t discarded = 0;
    if (clip_table) {
      auto aligned =
          ef::seq::alignModalities(videos, ef::seq::parseAudioClipTable(clip_table));
      videos = std::move(aligned.videos);
      notes = std::move(aligned.warnings);
      discarded = aligned.discardedClips;
    }
    const fs::path dir = needStr(out_dir, "out_dir");
    fs::create_directories(dir);
    ef::text::writeFile((dir / "manifest.txt").string(),
                        ef::seq::formatManifest(videos));
    if (summary) {
      summary->videos = videos.size();
      summary->frames = 0;
      for (const auto &v : videos)
        summary->frames += v.frames.size();
      summary->discarded_clips = discarded;
      summary->warnings = notes.size();
    }
    if (warnings) {
      std::string joined;
      for (const auto &w : notes)
        joined += w + "\n";
      *warnings = dupString(joined);
    }
  });
}

ef_status ef_stats(const char *manifest, size_t bucket_width,
                   size_t class_counts[EF_NUM_CLASSES], size_t *unlabelled,
                   char **report) {
  return guarded([&] {
    if (bucket_width == 0)
      throw BadArgument{"bucket_width must be positive"};
    ef::seq::ManifestOptions opts;
    opts.checkPaths = false;
    auto stats = ef::seq::datasetStats(
        ef::seq::parseManifest(needStr(manifest, "manifest"), opts), bucket_width);
    if (class_counts)
      for (std::size_t c = 0; c < EF_NUM_CLASSES; ++c)
        class_counts[c] = stats.classCounts[c];
    if (unlabelled)
      *unlabelled = stats.unlabelled;
    if (report)
      *report = dupString(ef::seq::formatStats(stats));
  });
}

ef_status ef_train(const ef_config *cfg, const uint64_t *seed, const char *out_dir) {
  return guarded([&] {
    const auto &c = need(cfg, "cfg").cfg;
    ef::pipe::runTraining(c, seed ? *seed : c.seed.value_or(0),
                          needStr(out_dir, "out_dir"));
  });
}

ef_status ef_evaluate(const char *checkpoint, const char *manifest,
                      const char *out_dir, ef_metrics *metrics, int *has_metrics) {
  return guarded([&] {
    auto run = ef::pipe::runEvaluation(needStr(checkpoint, "checkpoint"),
                                       needStr(manifest, "manifest"),
                                       needStr(out_dir, "out_dir"));
    if (has_metrics)
      *has_metrics = run.metrics ? 1 : 0;
    if (run.metrics)
      fillMetrics(*run.metrics, metrics);
  });
}

ef_status ef_records_read(const char *path, ef_records **out) {
  return guarded([&] {
    need(out, "out");
    *out = new ef_records{ef::eval::readPredictionLog(needStr(path, "path"))};
  });
}

ef_status ef_records_write(const ef_records *recs, const char *path) {
  return guarded([&] {
    ef::eval::writePredictionLog(need(recs, "recs").recs, needStr(path, "path"));
  });
}

ef_status ef_records_format(const ef_records *recs, char **text) {
  return guarded([&] {
    need(text, "text");
    *text = dupString(ef::eval::formatPredictionLog(need(recs, "recs").recs));
  });
}

void ef_records_free(ef_records *recs) { delete recs; }

size_t ef_records_count(const ef_records *recs) {
  return recs ? recs->recs.size() : 0;
}

ef_status ef_records_get(const ef_records *recs, size_t index,
                         const char **video_id, double logits[EF_NUM_CLASSES],
                         int *predicted, int *label) {
  return guarded([&] {
    const auto &all = need(recs, "recs").recs;
    if (index >= all.size())
      throw BadArgument{"record index " + std::to_string(index) + " out of range"};
    const auto &r = all[index];
    if (video_id)
      *video_id = r.videoId.c_str();
    if (logits)
      for (std::size_t c = 0; c < EF_NUM_CLASSES; ++c)
        logits[c] = r.logits[c];
    if (predicted)
      *predicted = r.predicted;
    if (label)
      *label = r.label.value_or(EF_NO_LABEL);
  });
}

ef_status ef_records_metrics(const ef_records *recs, ef_metrics *out, char **report) {
  return guarded([&] {
    auto m = ef::eval::computeMetrics(need(recs, "recs").recs);
    fillMetrics(m, out);
    if (report)
      *report = dupString(ef::eval::formatMetrics(m));
  });
}

ef_status ef_records_submit(const ef_records *recs, const char *out_dir) {
  return guarded([&] {
    ef::eval::writeSubmission(need(recs, "recs").recs, needStr(out_dir, "out_dir"));
  });
}

ef_status ef_logs_load(const char *const *paths, size_t count, ef_log_table **out) {
  return guarded([&] {
    need(out, "out");
    if (count > 0)
      need(paths, "paths");
    std::vector<std::string> ps;
    for (std::size_t i = 0; i < count; ++i)
      ps.emplace_back(needStr(paths[i], "paths[i]"));
    *out = new ef_log_table{ef::fusion::loadLogs(ps)};
  });
}

void ef_logs_free(ef_log_table *table) { delete table; }

size_t ef_logs_model_count(const ef_log_table *t) {
  return t ? t->table.modelCount() : 0;
}

size_t ef_logs_video_count(const ef_log_table *t) {
  return t ? t->table.videoCount() : 0;
}

ef_status ef_logs_accuracy(const ef_log_table *t, size_t model, double *accuracy) {
  return guarded([&] {
    const auto &table = need(t, "table").table;
    if (model >= table.modelCount())
      throw BadArgument{"model index " + std::to_string(model) + " out of range"};
    if (!table.accuracy[model])
      throw ef::ContractError(table.models[model] + " has no labels, so no accuracy");
    need(accuracy, "accuracy");
    *accuracy = *table.accuracy[model];
  });
}

ef_status ef_class_weights(const size_t counts[EF_NUM_CLASSES],
                           double weights[EF_NUM_CLASSES]) {
  return guarded([&] {
    need(counts, "counts");
    need(weights, "weights");
    std::array<std::size_t, EF_NUM_CLASSES> c;
    for (std::size_t i = 0; i < c.size(); ++i)
      c[i] = counts[i];
    auto w = ef::fusion::computeClassWeights(c);
    for (std::size_t i = 0; i < c.size(); ++i)
      weights[i] = w[i];
  });
}

ef_status ef_fuse(const ef_log_table *table, const ef_log_table *weight_source,
                  const ef_fusion_spec *spec, ef_records **out, double *cv_accuracy) {
  return guarded([&] {
    const auto &t = need(table, "table").table;
    const auto &src = weight_source ? weight_source->table : t;
    const auto &sp = need(spec, "spec");
    need(out, "out");
    if (src.modelCount() != t.modelCount())
      throw ef::ConfigError("weight source lists " + std::to_string(src.modelCount()) +
                            " models, the fused table " +
                            std::to_string(t.modelCount()));
    ef::fusion::FusionSpec s;
    s.method = sp.method;
    s.rescale = sp.rescale != 0;
    s.countVotes = sp.count_votes != 0;
    if (sp.model_weights)
      s.modelWeights.assign(sp.model_weights, sp.model_weights + sp.model_weight_count);
    else if (sp.method == 1 || sp.method == 2 || sp.method == 4)
      s.modelWeights = ef::fusion::accuracyWeights(src);
    if (sp.class_weights) {
      ef::fusion::ClassWeights w;
      for (std::size_t c = 0; c < w.size(); ++c)
        w[c] = sp.class_weights[c];
      s.classWeights = w;
    }
    if (sp.method == 5) {
      s.regression = ef::fusion::learnRegression(src, sp.folds ? sp.folds : 5, s.rescale);
      if (cv_accuracy)
        *cv_accuracy = s.regression->cvAccuracy;
    }
    *out = new ef_records{ef::fusion::fuse(t, s)};
  });
}

} // extern "C"
