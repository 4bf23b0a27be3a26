#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/pgm.hpp"
#include "cstl/rng.hpp"
#include "cstl/tensor.hpp"

namespace cstl {

// One silhouette clip with identity/condition/view metadata. Frames are
// thresholded to {0,1} on load.
struct GaitSequence {
  Tensor<float> frames;  // [N,H,W]
  std::string subject;
  std::string condition;  // NM / BG / CL
  int view = 0;
};

struct SequenceEntry {
  std::string subject;
  std::string condition;      // NM / BG / CL
  int seq = 0;                // 1-based within the condition
  int view = 0;               // degrees
  std::string rel_path;       // subject/<condition>-<seq>/<view>
  int frame_count = 0;
};

struct DatasetIndex {
  std::string root;
  std::vector<SequenceEntry> entries;
  std::vector<std::string> errors;    // per-file problems
  std::vector<std::string> warnings;  // skipped empty sequences etc.
};

namespace detail {

inline std::vector<std::string> sorted_dir_names(const std::string& dir,
                                                 bool files) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (files ? e.is_regular_file() : e.is_directory()) {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace detail

// Walks root/<subject>/<condition>-<seq>/<view>/<frame>.pgm in lexicographic
// order. Unreadable or malformed frames are reported per file; sequences
// without a single valid frame are skipped with a warning.
inline DatasetIndex load_dataset(const std::string& root) {
  DatasetIndex index;
  index.root = root;
  if (!std::filesystem::exists(root)) {
    throw std::runtime_error("load_dataset: no such directory: " + root);
  }
  for (const auto& subject : detail::sorted_dir_names(root, false)) {
    const std::string subj_dir = root + "/" + subject;
    for (const auto& condseq : detail::sorted_dir_names(subj_dir, false)) {
      const auto dash = condseq.find('-');
      if (dash == std::string::npos) {
        index.warnings.push_back("ignoring directory without condition-seq name: " +
                                 subj_dir + "/" + condseq);
        continue;
      }
      const std::string condition = condseq.substr(0, dash);
      int seq = 0;
      try {
        seq = std::stoi(condseq.substr(dash + 1));
      } catch (const std::exception&) {
        index.warnings.push_back("unparseable sequence id: " + condseq);
        continue;
      }
      const std::string cond_dir = subj_dir + "/" + condseq;
      for (const auto& view_name : detail::sorted_dir_names(cond_dir, false)) {
        int view = 0;
        try {
          view = std::stoi(view_name);
        } catch (const std::exception&) {
          index.warnings.push_back("unparseable view: " + cond_dir + "/" + view_name);
          continue;
        }
        const std::string view_dir = cond_dir + "/" + view_name;
        int frames = 0;
        for (const auto& frame : detail::sorted_dir_names(view_dir, true)) {
          const std::string path = view_dir + "/" + frame;
          try {
            const auto img = read_pgm(path);
            const bool shape_ok = (img.width == 44 && img.height == 64) ||
                                  (img.width == 88 && img.height == 128);
            if (!shape_ok) {
              index.errors.push_back(path + ": unsupported dimensions " +
                                     std::to_string(img.width) + "x" +
                                     std::to_string(img.height));
              continue;
            }
            ++frames;
          } catch (const std::exception& e) {
            index.errors.push_back(path + ": " + e.what());
          }
        }
        if (frames == 0) {
          index.warnings.push_back("skipping empty sequence " + view_dir);
          continue;
        }
        SequenceEntry entry;
        entry.subject = subject;
        entry.condition = condition;
        entry.seq = seq;
        entry.view = view;
        entry.rel_path = subject + "/" + condseq + "/" + view_name;
        entry.frame_count = frames;
        index.entries.push_back(std::move(entry));
      }
    }
  }
  return index;
}

// Loads the frames of one indexed sequence, thresholding pixels at 0.5.
inline GaitSequence load_sequence(const DatasetIndex& index,
                                  const SequenceEntry& entry) {
  const std::string dir = index.root + "/" + entry.rel_path;
  std::vector<PgmImage> frames;
  for (const auto& name : detail::sorted_dir_names(dir, true)) {
    try {
      frames.push_back(read_pgm(dir + "/" + name));
    } catch (const std::exception&) {
      continue;  // already reported at indexing time
    }
  }
  if (frames.empty()) {
    throw std::runtime_error("load_sequence: no readable frames in " + dir);
  }
  const int h = frames[0].height, w = frames[0].width;
  GaitSequence seq;
  seq.subject = entry.subject;
  seq.condition = entry.condition;
  seq.view = entry.view;
  seq.frames = Tensor<float>({static_cast<int>(frames.size()), h, w});
  for (std::size_t n = 0; n < frames.size(); ++n) {
    if (frames[n].height != h || frames[n].width != w) {
      throw std::runtime_error("load_sequence: mixed frame sizes in " + dir);
    }
    float* dst = seq.frames.data() + static_cast<std::int64_t>(n) * h * w;
    for (std::size_t i = 0; i < frames[n].pixels.size(); ++i) {
      dst[i] = frames[n].pixels[i] >= 128 ? 1.0f : 0.0f;
    }
  }
  return seq;
}

// Manifest: subject<TAB>condition-seq<TAB>view<TAB>frames<TAB>relpath
inline void write_manifest(const std::string& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  char buf[16];
  for (const auto& e : index.entries) {
    std::snprintf(buf, sizeof(buf), "%s-%02d", e.condition.c_str(), e.seq);
    out << e.subject << '\t' << buf << '\t' << e.view << '\t' << e.frame_count
        << '\t' << e.rel_path << '\n';
  }
}

enum class SampleMode { kTrain, kTest };

// Train mode: contiguous window of n frames starting at a random offset,
// wrapping (whole-sequence loop) when the clip is shorter than n. Test
// mode: every frame, in order.
inline Tensor<float> sample_clip(const GaitSequence& seq, int n,
                                 SampleMode mode, Rng& rng,
                                 std::vector<int>* picked = nullptr) {
  const int len = seq.frames.extent(0);
  const int h = seq.frames.extent(1), w = seq.frames.extent(2);
  if (mode == SampleMode::kTest) {
    if (picked) {
      picked->resize(static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) (*picked)[static_cast<std::size_t>(i)] = i;
    }
    return seq.frames;
  }
  if (n < 1) throw std::invalid_argument("sample_clip: n must be >= 1");
  Tensor<float> clip({n, h, w});
  const std::int64_t frame = static_cast<std::int64_t>(h) * w;
  const int start =
      len > n ? static_cast<int>(rng.next_index(len - n + 1)) : 0;
  if (picked) picked->resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const int src = (start + t) % len;
    if (picked) (*picked)[static_cast<std::size_t>(t)] = src;
    const float* s = seq.frames.data() + src * frame;
    float* d = clip.data() + t * frame;
    for (std::int64_t i = 0; i < frame; ++i) d[i] = s[i];
  }
  return clip;
}

}  // namespace cstl
