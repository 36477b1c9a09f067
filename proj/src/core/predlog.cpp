// SPDX-License-Identifier: Apache-2.0
#include "emofuse/predlog.hpp"

#include <algorithm>
#include <set>

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::eval {

namespace fs = std::filesystem;

int argmax(std::span<const double> values) {
  if (values.empty())
    throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best])
      best = i;
  return static_cast<int>(best);
}

PredictionRecord makeRecord(std::string videoId, const Logits &logits,
                            std::optional<int> label) {
  return PredictionRecord{std::move(videoId), logits, argmax(logits), label};
}

std::string formatPredictionLog(std::span<const PredictionRecord> records) {
  std::string out;
  for (const auto &r : records) {
    out += r.videoId;
    out += '\t';
    out += r.label ? std::to_string(*r.label) : "-";
    out += '\t';
    out += std::to_string(r.predicted);
    out += '\t';
    for (std::size_t c = 0; c < r.logits.size(); ++c) {
      if (c)
        out += ',';
      out += text::formatDouble(r.logits[c]);
    }
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> parsePredictionLog(std::string_view text,
                                                 const std::string &origin) {
  std::vector<PredictionRecord> out;
  auto lines = text::split(text, '\n');
  auto classField = [&](std::string_view cell, std::size_t line) {
    auto v = text::parseInt(cell);
    if (!v || *v < 0 || *v >= static_cast<long long>(seq::kNumClasses))
      throw FormatError(origin, line,
                        "bad class index '" + std::string(cell) + "'");
    return static_cast<int>(*v);
  };
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (line.empty() && ln + 1 == lines.size())
      break;
    const std::size_t lineNo = ln + 1;
    auto cols = text::split(line, '\t');
    if (cols.size() != 4)
      throw FormatError(origin, lineNo,
                        "expected 4 tab-separated fields, found " +
                            std::to_string(cols.size()));
    PredictionRecord r;
    r.videoId = std::string(cols[0]);
    if (r.videoId.empty())
      throw FormatError(origin, lineNo, "empty video id");
    if (cols[1] != "-")
      r.label = classField(cols[1], lineNo);
    r.predicted = classField(cols[2], lineNo);
    auto cells = text::split(cols[3], ',');
    if (cells.size() != seq::kNumClasses)
      throw FormatError(origin, lineNo,
                        "expected 7 logits, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto v = text::parseDouble(cells[c]);
      if (!v)
        throw FormatError(origin, lineNo, "bad logit '" + std::string(cells[c]) + "'");
      r.logits[c] = *v;
    }
    if (argmax(r.logits) != r.predicted)
      throw FormatError(origin, lineNo, "prediction disagrees with logits");
    out.push_back(std::move(r));
  }
  return out;
}

void writePredictionLog(std::span<const PredictionRecord> records,
                        const std::string &path) {
  text::writeFile(path, formatPredictionLog(records));
}

std::vector<PredictionRecord> readPredictionLog(const std::string &path) {
  return parsePredictionLog(text::readFile(path), path);
}

std::vector<fs::path> writeSubmission(std::span<const PredictionRecord> records,
                                      const fs::path &dir) {
  std::set<std::string> ids;
  for (const auto &r : records) {
    if (r.videoId.empty() || r.videoId.find('/') != std::string::npos)
      throw ValidationError("sample id '" + r.videoId +
                            "' cannot be used as a file name");
    if (!ids.insert(r.videoId).second)
      throw ValidationError("duplicate sample id " + r.videoId);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> paths;
  for (const auto &r : records) {
    fs::path p = dir / (r.videoId + ".txt");
    text::writeFile(p.string(), std::string(seq::className(r.predicted)) + "\n");
    paths.push_back(std::move(p));
  }
  return paths;
}

std::map<std::string, int> readSubmission(const fs::path &dir) {
  std::map<std::string, int> out;
  std::error_code ec;
  for (const auto &entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() != ".txt")
      continue;
    std::string body = text::readFile(entry.path().string());
    if (body.empty() || body.back() != '\n')
      throw FormatError(entry.path().string(), 1, "missing trailing newline");
    body.pop_back();
    auto idx = seq::classIndex(body);
    if (!idx)
      throw FormatError(entry.path().string(), 1, "unknown label '" + body + "'");
    out[entry.path().stem().string()] = *idx;
  }
  if (ec)
    throw IoError("cannot list " + dir.string() + ": " + ec.message());
  return out;
}

} // namespace emofuse::eval
