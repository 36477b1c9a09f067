// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emofuse/tensor.hpp"

namespace emofuse::seq {

inline constexpr std::size_t kNumClasses = 7;

/// Canonical label order (alphabetical).
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise"};

/// Label of a video from an unlabelled split (`-` in the manifest).
inline constexpr int kNoLabel = -1;

std::optional<int> classIndex(std::string_view word);
std::string_view className(int index);

/// Frames per second of the source videos and the matching audio clip length.
inline constexpr double kFramesPerSecond = 25.0;
inline constexpr double kClipSeconds = 0.04;

struct FrameRecord {
  std::string videoId;
  long frameIndex = 0;
  std::string visualPath;
  std::string audioPath; // empty when absent ("-" in the manifest)
  int label = 0;
};

struct VideoSequence {
  std::string videoId;
  int label = 0;
  std::vector<FrameRecord> frames;
  std::size_t trueLength() const { return frames.size(); }
};

struct ManifestOptions {
  /// Verify that every referenced feature file can be opened.
  bool checkPaths = true;
  /// Relative feature paths are resolved against this directory. Defaults to
  /// the manifest's own directory.
  std::optional<std::string> baseDir;
};

/// Parses the frame manifest (TSV: video_id, label_word, frame_index,
/// visual_path, audio_path). Videos keep first-appearance order; frames are
/// ordered by frame index. A label of `-` marks an unlabelled split.
std::vector<VideoSequence> parseManifest(const std::string &path,
                                         const ManifestOptions &opts = {});
std::vector<VideoSequence> parseManifestText(std::string_view text,
                                             const std::string &origin,
                                             const ManifestOptions &opts);
std::string formatManifest(const std::vector<VideoSequence> &videos);

/// Resolves a manifest path against `baseDir` unless it is absolute.
std::string resolvePath(const std::string &baseDir, const std::string &path);

/// video_id -> clip index -> audio feature path
using AudioClipTable =
    std::unordered_map<std::string, std::map<long, std::string>>;

/// TSV: video_id, clip_index, audio_feature_path.
AudioClipTable parseAudioClipTable(const std::string &path);
AudioClipTable parseAudioClipTableText(std::string_view text,
                                       const std::string &origin);

struct AlignmentResult {
  std::vector<VideoSequence> videos;
  std::size_t discardedClips = 0;
  std::vector<std::string> warnings;
};

/// Pairs each surviving visual frame with the audio clip of the same original
/// index. Clips whose frame was dropped are discarded. Videos without any
/// surviving frame are dropped with a warning.
AlignmentResult alignModalities(const std::vector<VideoSequence> &visual,
                                const AudioClipTable &audio);

/// Number of 0.04 s clip slots covering `durationSeconds` of audio.
std::size_t clipSlotCount(double durationSeconds);

/// One per-video feature file: rows `frame_index,v1,...,vD`.
struct FeatureTable {
  std::size_t dim = 0;
  std::map<long, std::vector<double>> rows;
};

FeatureTable parseFeatureTable(std::string_view text, const std::string &origin);
FeatureTable readFeatureTable(const std::string &path);
std::string formatFeatureTable(const FeatureTable &table);

enum class AudioKind { kNone, kFrames, kFunctional };

struct LoadedVideo {
  std::string videoId;
  int label = 0;
  Tensor visual; // [len x Dv], empty when not loaded
  Tensor audio;  // [len x Da] frame LLDs, [1 x Df] functionals, or empty
};

/// Reads and caches feature files. Each modality's width is fixed by the
/// first file read and enforced afterwards.
class FeatureLoader {
public:
  explicit FeatureLoader(std::string baseDir = ".");
  LoadedVideo load(const VideoSequence &video, bool visual, AudioKind audio);

  std::size_t visualDim() const noexcept { return visualDim_; }
  std::size_t audioDim() const noexcept { return audioDim_; }

private:
  const FeatureTable &table(const std::string &path);
  std::string baseDir_;
  std::size_t visualDim_ = 0, audioDim_ = 0;
  std::unordered_map<std::string, FeatureTable> cache_;
};

struct SequenceBlock {
  std::string videoId;
  std::size_t blockIndex = 0;
  Tensor visual; // [L x Dv] or empty
  Tensor audio;  // [L x Da] or empty
  std::size_t trueLength = 0;
  std::vector<bool> mask;
  int label = 0;
  std::size_t length() const { return mask.size(); }
};

struct BlockRange {
  std::size_t start = 0;
  std::size_t trueLength = 0;
};

/// ceil(len / L) consecutive windows.
std::vector<BlockRange> blockRanges(std::size_t length, std::size_t L);

/// Cuts the frame-level tensors into blocks of L frames. A short final block
/// is padded with copies of its own last frame.
std::vector<SequenceBlock> blockSequence(const LoadedVideo &video, std::size_t L);
/// Whole-video functionals become a single one-frame block.
SequenceBlock functionalBlock(const LoadedVideo &video);

struct DatasetStats {
  std::array<std::size_t, kNumClasses> classCounts{};
  std::size_t videos = 0;
  std::size_t unlabelled = 0; // videos with kNoLabel; not in classCounts
  std::size_t bucketWidth = 1;
  /// bucket lower edge -> count
  std::map<std::size_t, std::size_t> lengthHistogram;
};

DatasetStats datasetStats(const std::vector<VideoSequence> &videos,
                          std::size_t bucketWidth = 1);
std::string formatStats(const DatasetStats &stats);

struct Batch {
  Tensor visual; // [B x L x Dv] or empty
  Tensor audio;  // [B x L x Da] or empty
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::vector<std::string> videoIds;
  std::vector<std::size_t> blockIndices;
  std::size_t size() const { return labels.size(); }
};

/// Single-consumer stream of batches over a fixed block list. Order is the
/// input order, or a seeded permutation when shuffling; the last batch may be
/// short.
class BatchIterator {
public:
  BatchIterator(const std::vector<SequenceBlock> &blocks, std::size_t batchSize,
                bool shuffle, std::uint64_t seed);

  std::size_t batchCount() const;
  Batch batch(std::size_t index) const;
  std::optional<Batch> next();
  /// Re-draws the order (if shuffling) from `seed` and rewinds.
  void reset(std::uint64_t seed);
  const std::vector<std::size_t> &order() const noexcept { return order_; }

private:
  const std::vector<SequenceBlock> &blocks_;
  std::size_t batchSize_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Seeded Fisher-Yates permutation of 0..n-1, identical on every platform.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

} // namespace emofuse::seq
