#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/adam.hpp"
#include "cstl/checkpoint.hpp"
#include "cstl/config.hpp"
#include "cstl/dataset.hpp"
#include "cstl/model.hpp"

namespace cstl {

struct TrainConfig {
  int p = 4;                 // subjects per batch
  int k = 2;                 // sequences per subject
  int frames = 16;           // clip length n
  double lr = 1e-4;
  int iterations = 2000;
  double margin = 0.2;
  int heads = 4;
  int parts = 16;
  int embed_dim = 128;
  LocalVariant local = LocalVariant::kFc;
  bool scale_frame = true;
  bool scale_short = true;
  bool scale_long = true;
  bool baseline = false;
  std::string backbone = "toy";  // toy | full
  int in_h = 64, in_w = 44;
  std::uint64_t seed = 1;
  int checkpoint_interval = 500;
  std::string resume;

  void validate() const {
    if (p * k < 4 || k < 2) {
      throw std::invalid_argument("train config: need p*k >= 4 and k >= 2");
    }
    if (lr <= 0) throw std::invalid_argument("train config: lr must be > 0");
    if (frames < 1) throw std::invalid_argument("train config: frames must be >= 1");
    if (backbone != "toy" && backbone != "full" &&
        parse_int_list(backbone).size() != 4) {
      throw std::invalid_argument(
          "train config: backbone must be toy, full or four channel counts");
    }
    if (!((in_h == 64 && in_w == 44) || (in_h == 128 && in_w == 88))) {
      throw std::invalid_argument("train config: resolution must be 64x44 or 128x88");
    }
  }

  ModelConfig model_config(int num_classes) const {
    ModelConfig cfg;
    if (backbone == "toy") {
      cfg.backbone = toy_backbone(in_h, in_w);
    } else if (backbone == "full") {
      cfg.backbone = BackboneConfig{};
    } else {
      cfg.backbone.channels = parse_int_list(backbone);  // custom profile
    }
    cfg.backbone.in_h = in_h;
    cfg.backbone.in_w = in_w;
    cfg.parts = parts;
    cfg.heads = heads;
    cfg.embed_dim = embed_dim;
    cfg.num_classes = num_classes;
    cfg.local = local;
    cfg.scale_frame = scale_frame;
    cfg.scale_short = scale_short;
    cfg.scale_long = scale_long;
    cfg.baseline = baseline;
    return cfg;
  }
};

// Applies `key = value` pairs onto a TrainConfig; unknown keys are errors.
inline void apply_config(TrainConfig& cfg,
                         const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "p") cfg.p = std::stoi(value);
    else if (key == "k") cfg.k = std::stoi(value);
    else if (key == "frames") cfg.frames = std::stoi(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "iterations") cfg.iterations = std::stoi(value);
    else if (key == "margin") cfg.margin = std::stod(value);
    else if (key == "heads") cfg.heads = std::stoi(value);
    else if (key == "parts") cfg.parts = std::stoi(value);
    else if (key == "embed_dim") cfg.embed_dim = std::stoi(value);
    else if (key == "local_variant") cfg.local = parse_local_variant(value);
    else if (key == "scales") {
      cfg.scale_frame = value.find("frame") != std::string::npos;
      cfg.scale_short = value.find("short") != std::string::npos;
      cfg.scale_long = value.find("long") != std::string::npos;
    } else if (key == "baseline") cfg.baseline = parse_bool(value);
    else if (key == "backbone") cfg.backbone = value;
    else if (key == "resolution") {
      const auto x = value.find('x');
      if (x == std::string::npos) {
        throw std::invalid_argument("resolution must look like 64x44");
      }
      cfg.in_h = std::stoi(value.substr(0, x));
      cfg.in_w = std::stoi(value.substr(x + 1));
    }
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stoi(value);
    else if (key == "resume") cfg.resume = value;
    else throw std::invalid_argument("unknown config key: " + key);
  }
}

// All training sequences resident in memory, grouped by subject.
struct TrainData {
  std::vector<GaitSequence> sequences;
  std::vector<std::string> subjects;              // sorted unique
  std::vector<std::vector<int>> by_subject;        // sequence ids per subject

  int num_classes() const { return static_cast<int>(subjects.size()); }
};

inline TrainData load_train_data(const DatasetIndex& index) {
  TrainData data;
  for (const auto& e : index.entries) {
    if (std::find(data.subjects.begin(), data.subjects.end(), e.subject) ==
        data.subjects.end()) {
      data.subjects.push_back(e.subject);
    }
  }
  std::sort(data.subjects.begin(), data.subjects.end());
  data.by_subject.resize(data.subjects.size());
  for (const auto& e : index.entries) {
    auto seq = load_sequence(index, e);
    const auto it =
        std::lower_bound(data.subjects.begin(), data.subjects.end(), e.subject);
    const auto label = static_cast<std::size_t>(it - data.subjects.begin());
    data.by_subject[label].push_back(static_cast<int>(data.sequences.size()));
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

struct Batch {
  Tensor<float> clips;      // [B,n,1,H,W]
  std::vector<int> labels;  // subject index per clip
};

// (p,k) batch: p distinct subjects, k clips each; sequences are drawn
// without replacement when a subject has enough, with replacement otherwise.
inline Batch sample_pk_batch(const TrainData& data, const TrainConfig& cfg,
                             Rng& rng) {
  const int subjects = data.num_classes();
  if (subjects < 2) {
    throw std::invalid_argument("sample_pk_batch: need at least 2 subjects");
  }
  if (subjects < cfg.p) {
    throw std::invalid_argument("sample_pk_batch: need at least p subjects");
  }
  std::vector<int> order(static_cast<std::size_t>(subjects));
  for (int i = 0; i < subjects; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < cfg.p; ++i) {
    const int j = i + static_cast<int>(rng.next_index(subjects - i));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  const int batch = cfg.p * cfg.k;
  Batch out;
  out.labels.reserve(static_cast<std::size_t>(batch));
  Tensor<float> clips({batch, cfg.frames, 1, cfg.in_h, cfg.in_w});
  int row = 0;
  for (int i = 0; i < cfg.p; ++i) {
    const int label = order[static_cast<std::size_t>(i)];
    const auto& pool = data.by_subject[static_cast<std::size_t>(label)];
    std::vector<int> chosen;
    if (static_cast<int>(pool.size()) >= cfg.k) {
      std::vector<int> idx(pool.size());
      for (std::size_t j = 0; j < pool.size(); ++j) idx[j] = static_cast<int>(j);
      for (int j = 0; j < cfg.k; ++j) {
        const int m = j + static_cast<int>(
                              rng.next_index(static_cast<std::int64_t>(idx.size()) - j));
        std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(m)]);
        chosen.push_back(pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
      }
    } else {
      for (int j = 0; j < cfg.k; ++j) {
        chosen.push_back(pool[static_cast<std::size_t>(
            rng.next_index(static_cast<std::int64_t>(pool.size())))]);
      }
    }
    for (int j = 0; j < cfg.k; ++j, ++row) {
      const auto& seq = data.sequences[static_cast<std::size_t>(chosen[static_cast<std::size_t>(j)])];
      auto clip = sample_clip(seq, cfg.frames, SampleMode::kTrain, rng);
      float* dst = clips.data() +
                   static_cast<std::int64_t>(row) * cfg.frames * cfg.in_h * cfg.in_w;
      const float* src = clip.data();
      for (std::int64_t x = 0; x < clip.numel(); ++x) dst[x] = src[x];
      out.labels.push_back(label);
    }
  }
  out.clips = std::move(clips);
  return out;
}

struct TrainResult {
  bool ok = true;
  std::string error;
  int iterations_run = 0;
  std::string checkpoint_path;
  std::string metrics_path;
  float final_loss = 0.0f;
};

// Full training loop with per-iteration CSV metrics and periodic
// checkpoints. Deterministic for a fixed seed in single-threaded mode; the
// batch stream for iteration i depends only on (seed, i), so resuming from
// a checkpoint reproduces an uninterrupted run.
inline TrainResult train(const TrainConfig& cfg, const DatasetIndex& index,
                         const std::string& out_dir,
                         CstlModel<float>* model_out = nullptr) {
  cfg.validate();
  auto data = load_train_data(index);
  if (data.num_classes() < 2) {
    throw std::invalid_argument("train: dataset has fewer than 2 subjects");
  }
  std::filesystem::create_directories(out_dir);

  CstlModel<float> model(cfg.model_config(data.num_classes()), cfg.seed);
  auto adam = AdamState<float>::zeros_like(model.params());
  int start_iter = 0;
  if (!cfg.resume.empty()) {
    const auto data_ck = read_checkpoint(cfg.resume);
    load_checkpoint(data_ck, model.params(), &adam);
    start_iter = static_cast<int>(adam.step);
  }

  TrainResult result;
  result.checkpoint_path = out_dir + "/model.ckpt";
  result.metrics_path = out_dir + "/metrics.csv";
  std::ofstream metrics(result.metrics_path,
                        start_iter > 0 ? std::ios::app : std::ios::out);
  if (!metrics) throw std::runtime_error("train: cannot open " + result.metrics_path);
  if (start_iter == 0) metrics << "iter,total,tri,ce\n";

  for (int it = start_iter; it < cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, 0xB5EED000ull + static_cast<std::uint64_t>(it)));
    auto batch = sample_pk_batch(data, cfg, rng);
    const auto losses =
        model.forward_loss(batch.clips, batch.labels, static_cast<float>(cfg.margin));
    if (!std::isfinite(losses.total)) {
      result.ok = false;
      result.error = "non-finite loss at iteration " + std::to_string(it + 1);
      break;  // the last good checkpoint stays on disk
    }
    model.params().zero_grads();
    model.backward();
    adam_step(model.params(), adam, static_cast<float>(cfg.lr));

    metrics << it + 1 << ',' << losses.total << ',' << losses.tri << ','
            << losses.ce << '\n';
    result.final_loss = losses.total;
    result.iterations_run = it + 1;
    if ((it + 1) % cfg.checkpoint_interval == 0 || it + 1 == cfg.iterations) {
      save_checkpoint(result.checkpoint_path, model.params(), &adam);
    }
  }
  metrics.flush();
  if (result.ok && result.iterations_run == 0) {
    save_checkpoint(result.checkpoint_path, model.params(), &adam);
  }
  if (model_out) *model_out = std::move(model);
  return result;
}

}  // namespace cstl
