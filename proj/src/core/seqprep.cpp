// SPDX-License-Identifier: Apache-2.0
#include "emofuse/seqprep.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include "emofuse/error.hpp"
#include "emofuse/textio.hpp"

namespace emofuse::seq {

namespace fs = std::filesystem;

std::optional<int> classIndex(std::string_view word) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i)
    if (kClassNames[i] == word)
      return static_cast<int>(i);
  return std::nullopt;
}

std::string_view className(int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= kNumClasses)
    throw ValidationError("class index " + std::to_string(index) +
                          " out of range");
  return kClassNames[static_cast<std::size_t>(index)];
}

std::string resolvePath(const std::string &baseDir, const std::string &path) {
  fs::path p(path);
  if (p.is_absolute() || baseDir.empty())
    return path;
  return (fs::path(baseDir) / p).string();
}

namespace {

std::string where(const std::string &origin, std::size_t line) {
  return origin + ":" + std::to_string(line) + ": ";
}

bool readable(const std::string &path) {
  std::ifstream in(path);
  return static_cast<bool>(in);
}

} // namespace

std::vector<VideoSequence> parseManifestText(std::string_view text,
                                             const std::string &origin,
                                             const ManifestOptions &opts) {
  const std::string base = opts.baseDir.value_or(".");
  std::vector<VideoSequence> videos;
  std::unordered_map<std::string, std::size_t> slot;
  std::unordered_map<std::string, std::size_t> firstLine;
  std::set<std::pair<std::string, long>> seen;
  std::unordered_set<std::string> checked;

  auto lines = text::split(text, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    if (text::trim(line).empty())
      continue;
    const std::size_t lineNo = ln + 1;
    auto cols = text::split(line, '\t');
    if (cols.size() != 5)
      throw FormatError(origin, lineNo,
                        "expected 5 tab-separated columns, found " +
                            std::to_string(cols.size()));
    FrameRecord rec;
    rec.videoId = std::string(cols[0]);
    if (rec.videoId.empty())
      throw FormatError(origin, lineNo, "empty video id");
    auto label = cols[1] == "-" ? std::optional<int>(kNoLabel) : classIndex(cols[1]);
    if (!label)
      throw ValidationError(where(origin, lineNo) + "unknown label '" +
                            std::string(cols[1]) + "'");
    rec.label = *label;
    auto idx = text::parseInt(cols[2]);
    if (!idx || *idx < 0)
      throw FormatError(origin, lineNo,
                        "bad frame index '" + std::string(cols[2]) + "'");
    rec.frameIndex = static_cast<long>(*idx);
    rec.visualPath = cols[3] == "-" ? std::string() : std::string(cols[3]);
    rec.audioPath = cols[4] == "-" ? std::string() : std::string(cols[4]);
    if (!seen.emplace(rec.videoId, rec.frameIndex).second)
      throw ValidationError(where(origin, lineNo) + "duplicate frame " +
                            std::to_string(rec.frameIndex) + " for video " +
                            rec.videoId);
    if (opts.checkPaths)
      for (const std::string *p : {&rec.visualPath, &rec.audioPath}) {
        if (p->empty() || checked.count(*p))
          continue;
        if (!readable(resolvePath(base, *p)))
          throw IoError(where(origin, lineNo) + "cannot read feature file " +
                        *p);
        checked.insert(*p);
      }
    auto [it, fresh] = slot.emplace(rec.videoId, videos.size());
    if (fresh) {
      videos.push_back(VideoSequence{rec.videoId, rec.label, {}});
      firstLine[rec.videoId] = lineNo;
    } else if (videos[it->second].label != rec.label) {
      throw ValidationError(where(origin, lineNo) + "video " + rec.videoId +
                            " changes label (first seen on line " +
                            std::to_string(firstLine[rec.videoId]) + ")");
    }
    videos[it->second].frames.push_back(std::move(rec));
  }
  for (auto &v : videos)
    std::stable_sort(v.frames.begin(), v.frames.end(),
                     [](const FrameRecord &a, const FrameRecord &b) {
                       return a.frameIndex < b.frameIndex;
                     });
  return videos;
}

std::vector<VideoSequence> parseManifest(const std::string &path,
                                         const ManifestOptions &opts) {
  ManifestOptions o = opts;
  if (!o.baseDir)
    o.baseDir = fs::path(path).parent_path().string();
  return parseManifestText(text::readFile(path), path, o);
}

std::string formatManifest(const std::vector<VideoSequence> &videos) {
  std::string out;
  for (const auto &v : videos)
    for (const auto &f : v.frames) {
      out += f.videoId;
      out += '\t';
      out += f.label == kNoLabel ? std::string_view("-") : className(f.label);
      out += '\t';
      out += std::to_string(f.frameIndex);
      out += '\t';
      out += f.visualPath.empty() ? "-" : f.visualPath;
      out += '\t';
      out += f.audioPath.empty() ? "-" : f.audioPath;
      out += '\n';
    }
  return out;
}

AudioClipTable parseAudioClipTableText(std::string_view text,
                                       const std::string &origin) {
  AudioClipTable table;
  auto lines = text::split(text, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    if (text::trim(line).empty())
      continue;
    auto cols = text::split(line, '\t');
    if (cols.size() != 3)
      throw FormatError(origin, ln + 1, "expected video_id, clip_index, path");
    auto idx = text::parseInt(cols[1]);
    if (!idx || *idx < 0)
      throw FormatError(origin, ln + 1, "bad clip index");
    auto &clips = table[std::string(cols[0])];
    if (!clips.emplace(static_cast<long>(*idx), std::string(cols[2])).second)
      throw ValidationError(where(origin, ln + 1) + "duplicate clip " +
                            std::string(cols[1]) + " for video " +
                            std::string(cols[0]));
  }
  return table;
}

AudioClipTable parseAudioClipTable(const std::string &path) {
  return parseAudioClipTableText(text::readFile(path), path);
}

AlignmentResult alignModalities(const std::vector<VideoSequence> &visual,
                                const AudioClipTable &audio) {
  AlignmentResult res;
  std::unordered_set<std::string> present;
  for (const auto &v : visual) {
    present.insert(v.videoId);
    if (v.frames.empty()) {
      res.warnings.push_back("video " + v.videoId +
                             " has no surviving frames; dropped");
      continue;
    }
    auto it = audio.find(v.videoId);
    std::vector<std::string> missing;
    VideoSequence out{v.videoId, v.label, {}};
    for (const auto &f : v.frames) {
      FrameRecord r = f;
      if (it == audio.end() || !it->second.count(f.frameIndex)) {
        missing.push_back(std::to_string(f.frameIndex));
        continue;
      }
      r.audioPath = it->second.at(f.frameIndex);
      out.frames.push_back(std::move(r));
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto &m : missing)
        list += (list.empty() ? "" : ",") + m;
      throw AlignmentError("video " + v.videoId +
                           ": no audio clip for frame(s) " + list);
    }
    res.discardedClips += it->second.size() - out.frames.size();
    res.videos.push_back(std::move(out));
  }
  std::vector<std::string> orphans;
  for (const auto &[id, clips] : audio)
    if (!present.count(id)) {
      res.discardedClips += clips.size();
      orphans.push_back(id);
    }
  std::sort(orphans.begin(), orphans.end());
  for (const auto &id : orphans)
    res.warnings.push_back("video " + id +
                           " has audio clips but no surviving frames; dropped");
  return res;
}

std::size_t clipSlotCount(double durationSeconds) {
  if (!(durationSeconds >= 0.0))
    throw ValidationError("negative audio duration");
  return static_cast<std::size_t>(std::llround(durationSeconds / kClipSeconds));
}

FeatureTable parseFeatureTable(std::string_view text, const std::string &origin) {
  FeatureTable table;
  auto lines = text::split(text, '\n');
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    if (text::trim(line).empty())
      continue;
    auto cells = text::split(line, ',');
    if (first) {
      first = false;
      if (!text::parseDouble(cells[0]))
        continue; // header row
    }
    auto idx = text::parseInt(cells[0]);
    if (!idx || *idx < 0)
      throw FormatError(origin, ln + 1, "bad frame index '" +
                                            std::string(cells[0]) + "'");
    if (cells.size() < 2)
      throw FormatError(origin, ln + 1, "row has no feature values");
    std::vector<double> row;
    row.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      auto v = text::parseDouble(cells[c]);
      if (!v)
        throw FormatError(origin, ln + 1,
                          "bad value in column " + std::to_string(c + 1));
      row.push_back(*v);
    }
    if (table.dim == 0)
      table.dim = row.size();
    else if (row.size() != table.dim)
      throw FormatError(origin, ln + 1,
                        "row has " + std::to_string(row.size()) +
                            " values, expected " + std::to_string(table.dim));
    if (!table.rows.emplace(static_cast<long>(*idx), std::move(row)).second)
      throw FormatError(origin, ln + 1, "duplicate frame index");
  }
  return table;
}

FeatureTable readFeatureTable(const std::string &path) {
  return parseFeatureTable(text::readFile(path), path);
}

std::string formatFeatureTable(const FeatureTable &table) {
  std::string out;
  for (const auto &[idx, row] : table.rows) {
    out += std::to_string(idx);
    for (double v : row) {
      out += ',';
      out += text::formatDouble(v);
    }
    out += '\n';
  }
  return out;
}

FeatureLoader::FeatureLoader(std::string baseDir) : baseDir_(std::move(baseDir)) {}

const FeatureTable &FeatureLoader::table(const std::string &path) {
  auto it = cache_.find(path);
  if (it == cache_.end())
    it = cache_.emplace(path, readFeatureTable(resolvePath(baseDir_, path))).first;
  return it->second;
}

LoadedVideo FeatureLoader::load(const VideoSequence &video, bool visual,
                                AudioKind audio) {
  LoadedVideo out;
  out.videoId = video.videoId;
  out.label = video.label;
  const std::size_t len = video.frames.size();
  if (len == 0)
    throw ValidationError("video " + video.videoId + " has no frames");

  auto fixDim = [](std::size_t &slot, std::size_t dim, const std::string &what,
                   const std::string &path) {
    if (slot == 0)
      slot = dim;
    else if (slot != dim)
      throw ShapeError(what + " file " + path + " has width " +
                       std::to_string(dim) + ", expected " +
                       std::to_string(slot));
  };
  auto frameRows = [&](bool isVisual, std::size_t &dimSlot,
                       const char *what) -> Tensor {
    Tensor t;
    for (std::size_t i = 0; i < len; ++i) {
      const FrameRecord &f = video.frames[i];
      const std::string &path = isVisual ? f.visualPath : f.audioPath;
      if (path.empty())
        throw ValidationError("video " + video.videoId + " frame " +
                              std::to_string(f.frameIndex) + " has no " + what +
                              " features");
      const FeatureTable &tab = table(path);
      fixDim(dimSlot, tab.dim, what, path);
      auto row = tab.rows.find(f.frameIndex);
      if (row == tab.rows.end())
        throw ValidationError(std::string(what) + " file " + path +
                              " has no row for frame " +
                              std::to_string(f.frameIndex));
      if (i == 0)
        t = Tensor(Shape{len, dimSlot});
      std::copy(row->second.begin(), row->second.end(),
                t.raw() + i * dimSlot);
    }
    return t;
  };

  if (visual)
    out.visual = frameRows(true, visualDim_, "visual");
  if (audio == AudioKind::kFrames) {
    out.audio = frameRows(false, audioDim_, "audio");
  } else if (audio == AudioKind::kFunctional) {
    const std::string &path = video.frames.front().audioPath;
    if (path.empty())
      throw ValidationError("video " + video.videoId +
                            " has no audio functional file");
    const FeatureTable &tab = table(path);
    if (tab.rows.size() != 1)
      throw ValidationError("functional file " + path + " must hold one row, has " +
                            std::to_string(tab.rows.size()));
    fixDim(audioDim_, tab.dim, "audio functional", path);
    const auto &row = tab.rows.begin()->second;
    out.audio = Tensor(Shape{1, row.size()}, row);
  }
  return out;
}

std::vector<BlockRange> blockRanges(std::size_t length, std::size_t L) {
  if (L == 0)
    throw ContractError("block length must be at least 1");
  if (length == 0)
    throw ContractError("cannot block an empty sequence");
  std::vector<BlockRange> out;
  for (std::size_t start = 0; start < length; start += L)
    out.push_back({start, std::min(L, length - start)});
  return out;
}

static Tensor padSlice(const Tensor &src, BlockRange r, std::size_t L) {
  if (src.empty())
    return Tensor();
  const std::size_t D = src.dim(1);
  Tensor out(Shape{L, D});
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t from = r.start + std::min(t, r.trueLength - 1);
    std::copy_n(src.raw() + from * D, D, out.raw() + t * D);
  }
  return out;
}

std::vector<SequenceBlock> blockSequence(const LoadedVideo &video, std::size_t L) {
  std::size_t len = 0;
  if (!video.visual.empty())
    len = video.visual.dim(0);
  if (!video.audio.empty()) {
    if (len != 0 && video.audio.dim(0) != len)
      throw ShapeError("video " + video.videoId +
                       " has mismatched visual/audio frame counts");
    len = video.audio.dim(0);
  }
  std::vector<SequenceBlock> out;
  std::size_t index = 0;
  for (BlockRange r : blockRanges(len, L)) {
    SequenceBlock b;
    b.videoId = video.videoId;
    b.blockIndex = index++;
    b.label = video.label;
    b.trueLength = r.trueLength;
    b.mask.assign(L, false);
    std::fill_n(b.mask.begin(), r.trueLength, true);
    b.visual = padSlice(video.visual, r, L);
    b.audio = padSlice(video.audio, r, L);
    out.push_back(std::move(b));
  }
  return out;
}

SequenceBlock functionalBlock(const LoadedVideo &video) {
  if (video.audio.empty() || video.audio.dim(0) != 1)
    throw ShapeError("video " + video.videoId + " has no functional row");
  SequenceBlock b;
  b.videoId = video.videoId;
  b.label = video.label;
  b.trueLength = 1;
  b.mask = {true};
  b.audio = video.audio;
  return b;
}

DatasetStats datasetStats(const std::vector<VideoSequence> &videos,
                          std::size_t bucketWidth) {
  if (bucketWidth == 0)
    throw ContractError("histogram bucket width must be positive");
  DatasetStats s;
  s.bucketWidth = bucketWidth;
  for (const auto &v : videos) {
    if (v.label == kNoLabel)
      ++s.unlabelled;
    else
      ++s.classCounts[static_cast<std::size_t>(v.label)];
    ++s.videos;
    ++s.lengthHistogram[(v.trueLength() / bucketWidth) * bucketWidth];
  }
  return s;
}

std::string formatStats(const DatasetStats &s) {
  std::string out = "videos\t" + std::to_string(s.videos) + "\n";
  if (s.unlabelled)
    out += "unlabelled\t" + std::to_string(s.unlabelled) + "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c)
    out += "class\t" + std::string(kClassNames[c]) + "\t" +
           std::to_string(s.classCounts[c]) + "\n";
  for (const auto &[edge, n] : s.lengthHistogram) {
    out += "length\t" + std::to_string(edge);
    if (s.bucketWidth > 1)
      out += "-" + std::to_string(edge + s.bucketWidth - 1);
    out += "\t" + std::to_string(n) + "\n";
  }
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i)
    p[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

BatchIterator::BatchIterator(const std::vector<SequenceBlock> &blocks,
                             std::size_t batchSize, bool shuffle,
                             std::uint64_t seed)
    : blocks_(blocks), batchSize_(batchSize), shuffle_(shuffle) {
  if (batchSize == 0)
    throw ContractError("batch size must be at least 1");
  if (!blocks.empty()) {
    const SequenceBlock &ref = blocks.front();
    for (const auto &b : blocks) {
      if (b.length() != ref.length())
        throw ShapeError("block " + b.videoId + "#" +
                         std::to_string(b.blockIndex) + " has length " +
                         std::to_string(b.length()) + ", expected " +
                         std::to_string(ref.length()));
      if (b.visual.shape() != ref.visual.shape() ||
          b.audio.shape() != ref.audio.shape())
        throw ShapeError("block " + b.videoId + "#" +
                         std::to_string(b.blockIndex) +
                         " has a different feature width");
    }
  }
  reset(seed);
}

void BatchIterator::reset(std::uint64_t seed) {
  cursor_ = 0;
  if (shuffle_) {
    order_ = permutation(blocks_.size(), seed);
  } else {
    order_.resize(blocks_.size());
    for (std::size_t i = 0; i < order_.size(); ++i)
      order_[i] = i;
  }
}

std::size_t BatchIterator::batchCount() const {
  return (blocks_.size() + batchSize_ - 1) / batchSize_;
}

Batch BatchIterator::batch(std::size_t index) const {
  if (index >= batchCount())
    throw ContractError("batch index out of range");
  const std::size_t begin = index * batchSize_;
  const std::size_t end = std::min(blocks_.size(), begin + batchSize_);
  const std::size_t B = end - begin;
  const SequenceBlock &ref = blocks_[order_[begin]];
  const std::size_t L = ref.length();
  Batch out;
  auto gather = [&](auto member) {
    const Tensor &proto = ref.*member;
    if (proto.empty())
      return Tensor();
    const std::size_t D = proto.dim(1);
    Tensor t(Shape{B, L, D});
    for (std::size_t i = 0; i < B; ++i) {
      const Tensor &src = blocks_[order_[begin + i]].*member;
      std::copy_n(src.raw(), L * D, t.raw() + i * L * D);
    }
    return t;
  };
  out.visual = gather(&SequenceBlock::visual);
  out.audio = gather(&SequenceBlock::audio);
  for (std::size_t i = begin; i < end; ++i) {
    const SequenceBlock &b = blocks_[order_[i]];
    out.lengths.push_back(b.trueLength);
    out.labels.push_back(b.label);
    out.videoIds.push_back(b.videoId);
    out.blockIndices.push_back(b.blockIndex);
  }
  return out;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= batchCount())
    return std::nullopt;
  return batch(cursor_++);
}

} // namespace emofuse::seq
