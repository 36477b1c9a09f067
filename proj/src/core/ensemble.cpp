// SPDX-License-Identifier: Apache-2.0
#include "emofuse/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "emofuse/error.hpp"

namespace emofuse::fusion {

namespace {

constexpr double kRidge = 1e-8;

std::string idList(const std::vector<std::string> &ids) {
  constexpr std::size_t kShown = 10;
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < kShown; ++i)
    out += (i ? ", " : "") + ids[i];
  if (ids.size() > kShown)
    out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

const Logits &modelLogits(const LogTable &t, const FusionSpec &spec,
                          std::size_t m, std::size_t v, Logits &scratch) {
  const Logits &raw = t.records[m][v].logits;
  if (!spec.rescale)
    return raw;
  scratch = rescaleMinMax(raw);
  return scratch;
}

void validateSpec(const LogTable &t, const FusionSpec &spec) {
  if (spec.method < 1 || spec.method > 5)
    throw ConfigError("fusion method must be 1..5, got " + std::to_string(spec.method));
  if (t.modelCount() == 0)
    throw ConfigError("fusion needs at least one model");
  if (spec.method == 1 || spec.method == 2 || spec.method == 4) {
    if (spec.modelWeights.size() != t.modelCount())
      throw ConfigError("expected " + std::to_string(t.modelCount()) +
                        " model weights, got " +
                        std::to_string(spec.modelWeights.size()));
    bool positive = false;
    for (double w : spec.modelWeights) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw ConfigError("model weights must be finite and non-negative");
      positive = positive || w > 0.0;
    }
    if (!positive)
      throw ConfigError("at least one model weight must be positive");
  }
  if (spec.method == 4) {
    if (!spec.classWeights)
      throw ConfigError("method 4 needs class weights");
    for (double w : *spec.classWeights)
      if (!(w > 0.0) || !std::isfinite(w))
        throw ConfigError("class weights must be positive");
  }
  if (spec.method == 5) {
    if (!spec.regression)
      throw ContractError("method 5 needs learned regression weights");
    if (spec.regression->beta.size() != t.modelCount())
      throw ConfigError("regression weights cover " +
                        std::to_string(spec.regression->beta.size()) +
                        " models, the table has " + std::to_string(t.modelCount()));
  }
}

/// Solves (A + ridge I) x = b for symmetric A by Cholesky. A pivot that
/// falls to the rounding level of its diagonal entry means the ridge no
/// longer regularises the system.
std::vector<double> solveSpd(std::vector<double> a, std::vector<double> b,
                             std::size_t n) {
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i)
    diag[i] = (a[i * n + i] += kRidge);
  constexpr double kPivotFloor = 64.0 * std::numeric_limits<double>::epsilon();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k)
      d -= a[j * n + k] * a[j * n + k];
    if (!(d > kPivotFloor * diag[j]) || !std::isfinite(d))
      throw NumericError("regression normal equations are singular (column " +
                         std::to_string(j) + ")");
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k)
        s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k)
      s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k)
      s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return b;
}

/// Design row for (video v, class c): M logit features then the class one-hot.
void designRow(const LogTable &t, bool rescale, std::size_t v, std::size_t c,
               std::vector<double> &row) {
  const std::size_t M = t.modelCount();
  std::fill(row.begin(), row.end(), 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    const Logits &raw = t.records[m][v].logits;
    row[m] = rescale ? rescaleMinMax(raw)[c] : raw[c];
  }
  row[M + c] = 1.0;
}

RegressionWeights fitOn(const LogTable &t, bool rescale,
                        const std::vector<std::size_t> &videos) {
  const std::size_t M = t.modelCount(), n = M + kNumClasses;
  std::vector<double> ata(n * n, 0.0), aty(n, 0.0), row(n);
  for (std::size_t v : videos) {
    const int y = *t.label(v);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      designRow(t, rescale, v, c, row);
      const double target = static_cast<int>(c) == y ? 1.0 : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (row[i] == 0.0)
          continue;
        aty[i] += row[i] * target;
        for (std::size_t j = 0; j < n; ++j)
          ata[i * n + j] += row[i] * row[j];
      }
    }
  }
  auto theta = solveSpd(std::move(ata), std::move(aty), n);
  RegressionWeights w;
  w.beta.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(M));
  for (std::size_t c = 0; c < kNumClasses; ++c)
    w.gamma[c] = theta[M + c];
  return w;
}

} // namespace

std::optional<int> LogTable::label(std::size_t v) const {
  return records.empty() ? std::nullopt : records.front()[v].label;
}

LogTable buildLogTable(
    std::vector<std::pair<std::string, std::vector<PredictionRecord>>> logs) {
  LogTable t;
  if (logs.empty())
    throw ConfigError("no prediction logs given");
  std::unordered_map<std::string, std::size_t> index;
  for (const auto &r : logs.front().second) {
    if (!index.emplace(r.videoId, t.videoIds.size()).second)
      throw ValidationError(logs.front().first + " lists video " + r.videoId + " twice");
    t.videoIds.push_back(r.videoId);
  }
  for (auto &[name, recs] : logs) {
    std::vector<PredictionRecord> aligned(t.videoIds.size());
    std::vector<bool> seen(t.videoIds.size(), false);
    std::vector<std::string> extra, missing;
    for (auto &r : recs) {
      auto it = index.find(r.videoId);
      if (it == index.end()) {
        extra.push_back(r.videoId);
        continue;
      }
      if (seen[it->second])
        throw ValidationError(name + " lists video " + r.videoId + " twice");
      seen[it->second] = true;
      aligned[it->second] = std::move(r);
    }
    for (std::size_t v = 0; v < seen.size(); ++v)
      if (!seen[v])
        missing.push_back(t.videoIds[v]);
    if (!extra.empty() || !missing.empty()) {
      std::string msg = name + " does not cover the same videos as " +
                        logs.front().first;
      if (!missing.empty())
        msg += "; missing: " + idList(missing);
      if (!extra.empty())
        msg += "; extra: " + idList(extra);
      throw CoverageError(msg);
    }
    t.models.push_back(name);
    t.records.push_back(std::move(aligned));
  }
  for (std::size_t m = 1; m < t.modelCount(); ++m)
    for (std::size_t v = 0; v < t.videoCount(); ++v)
      if (t.records[m][v].label != t.records[0][v].label)
        throw ValidationError(t.models[m] + " disagrees with " + t.models[0] +
                              " on the label of " + t.videoIds[v]);
  for (std::size_t m = 0; m < t.modelCount(); ++m) {
    std::size_t correct = 0;
    bool labelled = t.videoCount() > 0;
    for (const auto &r : t.records[m]) {
      labelled = labelled && r.label.has_value();
      correct += r.label && *r.label == r.predicted;
    }
    t.accuracy.push_back(labelled ? std::optional<double>(
                                        static_cast<double>(correct) /
                                        static_cast<double>(t.videoCount()))
                                  : std::nullopt);
  }
  return t;
}

LogTable loadLogs(std::span<const std::string> paths) {
  std::vector<std::pair<std::string, std::vector<PredictionRecord>>> logs;
  for (const auto &p : paths)
    logs.emplace_back(p, eval::readPredictionLog(p));
  return buildLogTable(std::move(logs));
}

std::vector<double> accuracyWeights(const LogTable &table) {
  std::vector<double> out;
  for (std::size_t m = 0; m < table.modelCount(); ++m) {
    if (!table.accuracy[m])
      throw ContractError(table.models[m] + " has no labels, so no accuracy");
    out.push_back(*table.accuracy[m]);
  }
  return out;
}

ClassWeights computeClassWeights(std::span<const std::size_t, kNumClasses> counts) {
  std::size_t total = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0)
      throw ValidationError("class " + std::string(seq::kClassNames[c]) +
                            " has no training videos");
    total += counts[c];
  }
  ClassWeights w;
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    w[c] = static_cast<double>(total) /
           (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
    sum += w[c];
  }
  for (double &x : w)
    x *= static_cast<double>(kNumClasses) / sum;
  return w;
}

Logits rescaleMinMax(const Logits &logits) {
  const auto [lo, hi] = std::minmax_element(logits.begin(), logits.end());
  const double span = *hi - *lo;
  Logits out{};
  if (span > 0.0)
    for (std::size_t c = 0; c < kNumClasses; ++c)
      out[c] = (logits[c] - *lo) / span;
  return out;
}

Logits fusedScores(const LogTable &t, const FusionSpec &spec, std::size_t v) {
  Logits s{};
  Logits scratch;
  for (std::size_t m = 0; m < t.modelCount(); ++m) {
    const Logits &l = modelLogits(t, spec, m, v, scratch);
    switch (spec.method) {
    case 1:
      s[static_cast<std::size_t>(eval::argmax(l))] += spec.modelWeights[m];
      break;
    case 2:
      for (std::size_t c = 0; c < kNumClasses; ++c)
        s[c] += spec.modelWeights[m] * l[c];
      break;
    case 3:
      if (spec.countVotes)
        s[static_cast<std::size_t>(eval::argmax(l))] += 1.0;
      else
        for (std::size_t c = 0; c < kNumClasses; ++c)
          s[c] += l[c];
      break;
    case 4:
      for (std::size_t c = 0; c < kNumClasses; ++c)
        s[c] += spec.modelWeights[m] * std::sqrt((*spec.classWeights)[c]) * l[c];
      break;
    case 5:
      for (std::size_t c = 0; c < kNumClasses; ++c)
        s[c] += spec.regression->beta[m] * l[c];
      break;
    }
  }
  if (spec.method == 5)
    for (std::size_t c = 0; c < kNumClasses; ++c)
      s[c] += spec.regression->gamma[c];
  return s;
}

std::vector<PredictionRecord> fuse(const LogTable &table, const FusionSpec &spec) {
  validateSpec(table, spec);
  std::vector<PredictionRecord> out;
  out.reserve(table.videoCount());
  for (std::size_t v = 0; v < table.videoCount(); ++v)
    out.push_back(eval::makeRecord(table.videoIds[v], fusedScores(table, spec, v),
                                   table.label(v)));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> foldRanges(std::size_t n,
                                                            std::size_t k) {
  if (k < 2)
    throw ConfigError("cross validation needs at least 2 folds");
  if (n < k)
    throw ConfigError(std::to_string(k) + " folds need at least " +
                      std::to_string(k) + " videos, got " + std::to_string(n));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    out.emplace_back(start, start + size);
    start += size;
  }
  return out;
}

RegressionWeights learnRegression(const LogTable &table, std::size_t k,
                                  bool rescale) {
  for (std::size_t v = 0; v < table.videoCount(); ++v)
    if (!table.label(v))
      throw ValidationError("regression needs labels; " + table.videoIds[v] +
                            " has none");
  const auto folds = foldRanges(table.videoCount(), k);
  FusionSpec spec;
  spec.method = 5;
  spec.rescale = rescale;
  std::size_t correct = 0;
  for (const auto &[lo, hi] : folds) {
    std::vector<std::size_t> trainIdx;
    for (std::size_t v = 0; v < table.videoCount(); ++v)
      if (v < lo || v >= hi)
        trainIdx.push_back(v);
    spec.regression = fitOn(table, rescale, trainIdx);
    for (std::size_t v = lo; v < hi; ++v)
      correct += eval::argmax(fusedScores(table, spec, v)) == *table.label(v);
  }
  std::vector<std::size_t> all(table.videoCount());
  for (std::size_t v = 0; v < all.size(); ++v)
    all[v] = v;
  RegressionWeights w = fitOn(table, rescale, all);
  w.cvAccuracy = static_cast<double>(correct) / static_cast<double>(table.videoCount());
  return w;
}

} // namespace emofuse::fusion
