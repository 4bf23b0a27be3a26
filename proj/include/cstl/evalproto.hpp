#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/dataset.hpp"
#include "cstl/model.hpp"

namespace cstl {

struct EmbeddingRecord {
  std::string subject;
  std::string condition;
  int view = 0;
  Tensor<float> embedding;  // [K,C_e]
  int paired_view = -1;     // second constituent view of a mixed probe
};

// Test-mode embedding: all frames, no sampling.
template <typename T>
EmbeddingRecord embed_sequence(CstlModel<T>& model, const GaitSequence& seq) {
  if (seq.frames.empty()) {
    throw std::invalid_argument("embed_sequence: empty sequence");
  }
  const int frames = seq.frames.extent(0);
  const int h = seq.frames.extent(1), w = seq.frames.extent(2);
  Tensor<T> clips({1, frames, 1, h, w});
  for (std::int64_t i = 0; i < seq.frames.numel(); ++i) {
    clips.data()[i] = static_cast<T>(seq.frames.data()[i]);
  }
  auto f_o = model.embed(clips);
  EmbeddingRecord rec;
  rec.subject = seq.subject;
  rec.condition = seq.condition;
  rec.view = seq.view;
  rec.embedding = Tensor<float>({f_o.extent(1), f_o.extent(2)});
  for (std::int64_t i = 0; i < rec.embedding.numel(); ++i) {
    rec.embedding.data()[i] = static_cast<float>(f_o.data()[i]);
  }
  return rec;
}

// Sum over parts of per-part Euclidean distance.
inline double embedding_distance(const EmbeddingRecord& a,
                                 const EmbeddingRecord& b) {
  const int parts = a.embedding.extent(0), ce = a.embedding.extent(1);
  if (b.embedding.extent(0) != parts || b.embedding.extent(1) != ce) {
    throw std::invalid_argument("embedding_distance: shape mismatch");
  }
  double total = 0.0;
  for (int k = 0; k < parts; ++k) {
    double s = 0.0;
    const float* pa = a.embedding.data() + static_cast<std::int64_t>(k) * ce;
    const float* pb = b.embedding.data() + static_cast<std::int64_t>(k) * ce;
    for (int c = 0; c < ce; ++c) {
      const double d = static_cast<double>(pa[c]) - static_cast<double>(pb[c]);
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total;
}

struct RankCell {
  double accuracy = 0.0;
  bool defined = false;
};

struct RankReport {
  std::vector<int> ks;
  std::vector<std::string> conditions;          // sorted
  std::vector<int> probe_views;                 // sorted
  // values[condition][k][probe view]
  std::map<std::string, std::map<int, std::vector<RankCell>>> cells;
  std::map<std::string, std::map<int, double>> mean;  // across defined views
  std::map<std::string, std::map<int, double>> stddev;
  std::int64_t excluded_leaks = 0;  // same-view comparisons under exclusion
};

// Gallery/probe rank-k evaluation. For every probe and every gallery view
// (identical views skipped under exclusion), candidates of that view are
// ranked by distance with ties broken by gallery order; the probe scores a
// rank-k hit when a same-subject item lands in the top k. Per-cell rates
// are averaged over gallery views first, then reported per probe view with
// the across-view mean and sample standard deviation.
inline RankReport rank_k_eval(const std::vector<EmbeddingRecord>& gallery,
                              const std::vector<EmbeddingRecord>& probes,
                              const std::vector<int>& ks,
                              bool exclude_identical_view) {
  RankReport report;
  report.ks = ks;

  std::map<int, std::vector<int>> gallery_by_view;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    gallery_by_view[gallery[g].view].push_back(static_cast<int>(g));
  }

  // hit and trial counters per (condition, probe view, gallery view, k)
  struct Counter {
    std::map<int, std::int64_t> hits;  // per k
    std::int64_t trials = 0;
  };
  std::map<std::string, std::map<int, std::map<int, Counter>>> counters;

  for (const auto& probe : probes) {
    for (const auto& [gview, items] : gallery_by_view) {
      if (exclude_identical_view &&
          (gview == probe.view || gview == probe.paired_view)) {
        continue;
      }
      std::vector<std::pair<double, int>> ranked;
      ranked.reserve(items.size());
      for (int gi : items) {
        // instrumentation for the exclusion contract: counts compared
        // pairs that share the probe's view
        if (exclude_identical_view &&
            gallery[static_cast<std::size_t>(gi)].view == probe.view) {
          ++report.excluded_leaks;
        }
        ranked.emplace_back(
            embedding_distance(probe, gallery[static_cast<std::size_t>(gi)]), gi);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      auto& counter = counters[probe.condition][probe.view][gview];
      ++counter.trials;
      for (int k : ks) {
        bool hit = false;
        for (int r = 0; r < std::min<int>(k, static_cast<int>(ranked.size())); ++r) {
          if (gallery[static_cast<std::size_t>(ranked[static_cast<std::size_t>(r)].second)]
                  .subject == probe.subject) {
            hit = true;
            break;
          }
        }
        if (hit) ++counter.hits[k];
      }
    }
  }

  std::set<std::string> conds;
  std::set<int> views;
  for (const auto& probe : probes) {
    conds.insert(probe.condition);
    views.insert(probe.view);
  }
  report.conditions.assign(conds.begin(), conds.end());
  report.probe_views.assign(views.begin(), views.end());

  for (const auto& cond : report.conditions) {
    for (int k : ks) {
      auto& row = report.cells[cond][k];
      row.assign(report.probe_views.size(), RankCell{});
      std::vector<double> defined;
      for (std::size_t vi = 0; vi < report.probe_views.size(); ++vi) {
        const int pview = report.probe_views[vi];
        const auto cond_it = counters.find(cond);
        if (cond_it == counters.end()) continue;
        const auto view_it = cond_it->second.find(pview);
        if (view_it == cond_it->second.end()) continue;
        double sum = 0.0;
        int cells = 0;
        for (const auto& [gview, counter] : view_it->second) {
          if (counter.trials == 0) continue;
          const auto hit_it = counter.hits.find(k);
          const double hits =
              hit_it == counter.hits.end() ? 0.0 : static_cast<double>(hit_it->second);
          sum += hits / static_cast<double>(counter.trials);
          ++cells;
        }
        if (cells > 0) {
          row[vi].accuracy = sum / cells;
          row[vi].defined = true;
          defined.push_back(row[vi].accuracy);
        }
      }
      double mean = 0.0;
      for (double v : defined) mean += v;
      mean = defined.empty() ? std::nan("") : mean / static_cast<double>(defined.size());
      double sd = std::nan("");
      if (defined.size() >= 2) {
        double acc = 0.0;
        for (double v : defined) acc += (v - mean) * (v - mean);
        sd = std::sqrt(acc / static_cast<double>(defined.size() - 1));
      }
      report.mean[cond][k] = mean;
      report.stddev[cond][k] = sd;
    }
  }
  return report;
}

// CSV mirroring the cross-view table layout: one row per (condition, k),
// one column per probe view plus Mean and Std.
inline std::string rank_report_csv(const RankReport& report) {
  std::ostringstream out;
  out << "condition,rank";
  for (int v : report.probe_views) out << ',' << v;
  out << ",mean,std\n";
  char buf[32];
  auto fmt = [&buf](double v) {
    if (std::isnan(v)) return std::string("undefined");
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  for (const auto& cond : report.conditions) {
    for (int k : report.ks) {
      out << cond << ',' << k;
      const auto& row = report.cells.at(cond).at(k);
      for (const auto& cell : row) {
        out << ',' << (cell.defined ? fmt(cell.accuracy) : "undefined");
      }
      out << ',' << fmt(report.mean.at(cond).at(k)) << ','
          << fmt(report.stddev.at(cond).at(k)) << '\n';
    }
  }
  return out.str();
}

// CASIA-style partition: the first 4 NM sequences of every subject form the
// gallery, everything else probes.
inline void casia_partition(const std::vector<EmbeddingRecord>& records,
                            const std::vector<int>& seq_ids,
                            std::vector<EmbeddingRecord>* gallery,
                            std::vector<EmbeddingRecord>* probes) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].condition == "NM" && seq_ids[i] <= 4) {
      gallery->push_back(records[i]);
    } else {
      probes->push_back(records[i]);
    }
  }
}

// Restricts probes to the given views (the unseen-view scenario when those
// views were absent from training); gallery and machinery stay unchanged.
inline RankReport scenario_unseen_views(const std::vector<EmbeddingRecord>& gallery,
                                        const std::vector<EmbeddingRecord>& probes,
                                        const std::vector<int>& test_views,
                                        const std::vector<int>& ks,
                                        bool exclude_identical_view) {
  std::vector<EmbeddingRecord> filtered;
  for (const auto& p : probes) {
    if (std::find(test_views.begin(), test_views.end(), p.view) != test_views.end()) {
      filtered.push_back(p);
    }
  }
  return rank_k_eval(gallery, filtered, ks, exclude_identical_view);
}

// Mixed-view pairs on the dataset's view grid: every (v, v+delta) with both
// views present.
inline std::vector<std::pair<int, int>> mixed_view_pairs(
    const std::vector<int>& views, int delta) {
  std::set<int> grid(views.begin(), views.end());
  std::vector<std::pair<int, int>> pairs;
  for (int v : grid) {
    if (grid.count(v + delta)) pairs.emplace_back(v, v + delta);
  }
  if (pairs.empty()) {
    throw std::invalid_argument(
        "mixed_views: delta " + std::to_string(delta) +
        " is not representable on the dataset's view grid");
  }
  return pairs;
}

// Builds a half-and-half clip from the two views of one sequence.
inline GaitSequence mixed_view_sequence(const GaitSequence& a,
                                        const GaitSequence& b) {
  const int n_a = a.frames.extent(0) / 2;
  const int n_b = b.frames.extent(0) - b.frames.extent(0) / 2;
  const int h = a.frames.extent(1), w = a.frames.extent(2);
  GaitSequence mixed;
  mixed.subject = a.subject;
  mixed.condition = a.condition;
  mixed.view = a.view;
  mixed.frames = Tensor<float>({n_a + n_b, h, w});
  const std::int64_t frame = static_cast<std::int64_t>(h) * w;
  for (int t = 0; t < n_a; ++t) {
    const float* src = a.frames.data() + t * frame;
    float* dst = mixed.frames.data() + t * frame;
    for (std::int64_t i = 0; i < frame; ++i) dst[i] = src[i];
  }
  for (int t = 0; t < n_b; ++t) {
    const float* src = b.frames.data() + (b.frames.extent(0) / 2 + t) * frame;
    float* dst = mixed.frames.data() + (n_a + t) * frame;
    for (std::int64_t i = 0; i < frame; ++i) dst[i] = src[i];
  }
  return mixed;
}

// ---------------------------------------------------------------------------
// Embedding file: "CSTLEMB1", u32 LE count, u32 K, u32 C_e, then per record
// subject/condition/view as length-prefixed UTF-8 strings and f32 LE data.
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[] = "CSTLEMB1";

inline void write_embeddings(const std::string& path,
                             const std::vector<EmbeddingRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("write_embeddings: no records");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_embeddings: cannot open " + path);
  auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_str = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  out.write(kEmbeddingMagic, 8);
  put_u32(static_cast<std::uint32_t>(records.size()));
  put_u32(static_cast<std::uint32_t>(records[0].embedding.extent(0)));
  put_u32(static_cast<std::uint32_t>(records[0].embedding.extent(1)));
  for (const auto& rec : records) {
    put_str(rec.subject);
    put_str(rec.condition);
    put_str(std::to_string(rec.view));
    out.write(reinterpret_cast<const char*>(rec.embedding.data()),
              static_cast<std::streamsize>(rec.embedding.numel() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write_embeddings: short write to " + path);
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_embeddings: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kEmbeddingMagic) {
    throw std::runtime_error("read_embeddings: bad magic in " + path);
  }
  auto get_u32 = [&in, &path]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("read_embeddings: truncated " + path);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto get_str = [&]() {
    const std::uint32_t len = get_u32();
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
  };
  const std::uint32_t count = get_u32();
  const std::uint32_t parts = get_u32();
  const std::uint32_t ce = get_u32();
  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.subject = get_str();
    rec.condition = get_str();
    rec.view = std::stoi(get_str());
    rec.embedding = Tensor<float>({static_cast<int>(parts), static_cast<int>(ce)});
    in.read(reinterpret_cast<char*>(rec.embedding.data()),
            static_cast<std::streamsize>(rec.embedding.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("read_embeddings: truncated record in " + path);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace cstl
