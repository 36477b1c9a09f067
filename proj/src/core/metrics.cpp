// SPDX-License-Identifier: Apache-2.0
#include "emofuse/metrics.hpp"

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::eval {

MetricsReport computeMetrics(std::span<const PredictionRecord> records) {
  if (records.empty())
    throw ValidationError("metrics need at least one record");
  MetricsReport rep;
  std::size_t correct = 0;
  for (const auto &r : records) {
    if (!r.label)
      throw ValidationError("record " + r.videoId + " has no label");
    const auto t = static_cast<std::size_t>(*r.label);
    const auto p = static_cast<std::size_t>(r.predicted);
    if (t >= kNumClasses || p >= kNumClasses)
      throw ValidationError("record " + r.videoId + " has a class out of range");
    ++rep.confusion[t][p];
    correct += t == p;
  }
  rep.count = records.size();
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.count);
  double f1Sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t predicted = 0, support = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      predicted += rep.confusion[k][c];
      support += rep.confusion[c][k];
    }
    const double tp = static_cast<double>(rep.confusion[c][c]);
    ClassScores &s = rep.perClass[c];
    s.support = support;
    s.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    s.recall = support ? tp / static_cast<double>(support) : 0.0;
    const double pr = s.precision + s.recall;
    s.f1 = pr > 0.0 ? 2.0 * s.precision * s.recall / pr : 0.0;
    f1Sum += s.f1;
  }
  rep.macroF1 = f1Sum / static_cast<double>(kNumClasses);
  return rep;
}

std::string formatMetrics(const MetricsReport &rep) {
  std::string out = "count\t" + std::to_string(rep.count) + "\n";
  out += "accuracy\t" + text::formatDouble(rep.accuracy) + "\n";
  out += "macro_f1\t" + text::formatDouble(rep.macroF1) + "\n";
  out += "class\tprecision\trecall\tf1\tsupport\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const ClassScores &s = rep.perClass[c];
    out += std::string(seq::kClassNames[c]) + "\t" +
           text::formatDouble(s.precision) + "\t" +
           text::formatDouble(s.recall) + "\t" + text::formatDouble(s.f1) +
           "\t" + std::to_string(s.support) + "\n";
  }
  out += "confusion";
  for (std::size_t c = 0; c < kNumClasses; ++c)
    out += "\t" + std::string(seq::kClassNames[c]);
  out += "\n";
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    out += seq::kClassNames[t];
    for (std::size_t p = 0; p < kNumClasses; ++p)
      out += "\t" + std::to_string(rep.confusion[t][p]);
    out += "\n";
  }
  return out;
}

} // namespace emofuse::eval
