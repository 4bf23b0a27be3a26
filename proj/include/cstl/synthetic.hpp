#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cstl/dataset.hpp"
#include "cstl/pgm.hpp"
#include "cstl/rng.hpp"

namespace cstl {

// Procedural stick-blob walker benchmark. Identities come in pairs that
// share every body-shape parameter and differ only in gait period (20%)
// and phase, so appearance alone cannot separate them; distinct pairs
// differ in torso width and leg length by construction.
struct SyntheticSpec {
  int num_ids = 20;
  int seqs_per_id = 4;   // NM sequences
  int bg_seqs = 0;
  int cl_seqs = 0;
  int frames = 30;
  std::vector<int> views{0, 90};
  std::uint64_t seed = 1;
  int height = 64;
  int width = 44;
};

struct WalkerParams {
  double torso_w = 0;    // half-width, px
  double torso_len = 0;  // shoulder..hip, px
  double head_r = 0;
  double leg_len = 0;
  double stride = 0;     // foot swing amplitude, px
  double period = 0;     // frames per gait cycle
  double phase = 0;      // cycle fraction
};

namespace detail {

inline WalkerParams identity_params(const SyntheticSpec& spec, int id) {
  const int group = id / 2;
  const int twin = id % 2;
  Rng rng(derive_seed(spec.seed, 0xA11CE ^ static_cast<std::uint64_t>(group)));
  WalkerParams p;
  // linear lattices keep shape parameters distinct across groups
  p.torso_w = 4.6 + 0.09 * group;
  p.leg_len = 22.0 + 0.16 * group;
  p.torso_len = 14.0 + rng.uniform(0.0, 3.0);
  p.head_r = 3.6 + rng.uniform(0.0, 1.8);
  p.stride = 6.5 + rng.uniform(0.0, 3.0);
  const double base_period = 10.0 + rng.uniform(0.0, 6.0);
  p.period = twin == 0 ? base_period : base_period * 1.2;
  const double base_phase = rng.next_double();
  p.phase = twin == 0 ? base_phase : std::fmod(base_phase + 0.37, 1.0);
  return p;
}

struct Affine {
  double sx = 1.0;
  double shear = 0.0;
};

inline Affine view_affine(int view_deg) {
  const double rad = view_deg * 3.14159265358979323846 / 180.0;
  Affine a;
  a.sx = 0.45 + 0.55 * std::abs(std::sin(rad));
  a.shear = 0.18 * std::cos(rad);
  return a;
}

inline double seg_dist2(double px, double py, double x0, double y0, double x1,
                        double y1) {
  const double vx = x1 - x0, vy = y1 - y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0;
  t = std::max(0.0, std::min(1.0, t));
  const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
  return dx * dx + dy * dy;
}

inline PgmImage render_frame(const SyntheticSpec& spec, const WalkerParams& p,
                             const std::string& condition, int view, int t,
                             double phase_jitter) {
  const double H = spec.height, W = spec.width;
  const double cx = W * 0.5, cy = H * 0.5;
  const double ground = H - 3.0;
  const double phi =
      2.0 * 3.14159265358979323846 *
      (static_cast<double>(t) / p.period + p.phase + phase_jitter);
  const double swing = std::sin(phi);

  const bool coat = condition == "CL";
  const bool bag = condition == "BG";
  const double torso_w = p.torso_w * (coat ? 1.30 : 1.0);
  const double bob = 0.8 * std::sin(2.0 * phi);
  const double hip_y = ground - p.leg_len + bob;
  const double shoulder_y = hip_y - p.torso_len;
  const double head_cy = shoulder_y - 2.0 - p.head_r;

  const double foot1_x = cx + p.stride * swing;
  const double foot2_x = cx - p.stride * swing;
  const double lift1 = 1.8 * std::max(0.0, swing);
  const double lift2 = 1.8 * std::max(0.0, -swing);
  const double arm_len = 0.75 * p.torso_len;
  const double hand1_x = cx - 0.55 * p.stride * swing;
  const double hand2_x = cx + 0.55 * p.stride * swing;

  const auto aff = view_affine(view);
  PgmImage img;
  img.width = spec.width;
  img.height = spec.height;
  img.pixels.assign(static_cast<std::size_t>(spec.width) * spec.height, 0);

  for (int py = 0; py < spec.height; ++py) {
    for (int px = 0; px < spec.width; ++px) {
      // inverse view transform into the canonical body frame
      const double y = py + 0.5;
      const double x = cx + (px + 0.5 - cx - aff.shear * (y - cy)) / aff.sx;
      bool inside = false;

      // torso (slightly tapered band)
      if (y >= shoulder_y && y <= hip_y) {
        const double taper =
            1.0 - 0.12 * (y - shoulder_y) / std::max(1.0, hip_y - shoulder_y);
        inside = std::abs(x - cx) <= torso_w * taper;
      }
      // coat skirt below the hips
      if (!inside && coat && y > hip_y && y <= hip_y + 0.35 * p.leg_len) {
        inside = std::abs(x - cx) <= torso_w * 1.1;
      }
      // head
      if (!inside) {
        const double dx = x - cx, dy = y - head_cy;
        inside = dx * dx + dy * dy <= p.head_r * p.head_r;
      }
      // legs
      if (!inside) {
        const double thick = 1.7;
        inside = seg_dist2(x, y, cx, hip_y, foot1_x, ground - lift1) <=
                     thick * thick ||
                 seg_dist2(x, y, cx, hip_y, foot2_x, ground - lift2) <=
                     thick * thick;
      }
      // arms
      if (!inside) {
        const double thick = 1.2;
        inside = seg_dist2(x, y, cx, shoulder_y + 1.0, hand1_x,
                           shoulder_y + arm_len) <= thick * thick ||
                 seg_dist2(x, y, cx, shoulder_y + 1.0, hand2_x,
                           shoulder_y + arm_len) <= thick * thick;
      }
      // carried bag
      if (!inside && bag) {
        const double bx = cx + torso_w + 2.2, by = hip_y - 3.0;
        const double dx = (x - bx) / 2.6, dy = (y - by) / 4.2;
        inside = dx * dx + dy * dy <= 1.0;
      }
      if (inside) {
        img.pixels[static_cast<std::size_t>(py) * spec.width + px] = 255;
      }
    }
  }
  return img;
}

}  // namespace detail

// Writes the dataset tree plus manifest.tsv; byte-identical per seed.
inline DatasetIndex generate_synthetic(const SyntheticSpec& spec,
                                       const std::string& out_root) {
  if (spec.num_ids < 2) {
    throw std::invalid_argument("generate_synthetic: need at least 2 identities");
  }
  if (spec.frames < 1 || spec.views.empty()) {
    throw std::invalid_argument("generate_synthetic: need frames and views");
  }
  std::filesystem::create_directories(out_root);

  struct CondBlock {
    const char* name;
    int count;
  };
  const CondBlock blocks[3] = {{"NM", spec.seqs_per_id},
                               {"BG", spec.bg_seqs},
                               {"CL", spec.cl_seqs}};

  DatasetIndex index;
  index.root = out_root;
  char buf[64];
  for (int id = 0; id < spec.num_ids; ++id) {
    const auto params = detail::identity_params(spec, id);
    std::snprintf(buf, sizeof(buf), "%04d", id + 1);
    const std::string subject = buf;
    for (const auto& block : blocks) {
      for (int s = 1; s <= block.count; ++s) {
        for (std::size_t v = 0; v < spec.views.size(); ++v) {
          const int view = spec.views[v];
          Rng rng(derive_seed(
              spec.seed,
              mix64((static_cast<std::uint64_t>(id) << 32) ^
                    (static_cast<std::uint64_t>(s) << 16) ^
                    (static_cast<std::uint64_t>(v) << 8) ^
                    static_cast<std::uint64_t>(block.name[0]))));
          const double jitter = rng.uniform(-0.04, 0.04);

          std::snprintf(buf, sizeof(buf), "%s-%02d", block.name, s);
          const std::string condseq = buf;
          std::snprintf(buf, sizeof(buf), "%03d", view);
          const std::string rel = subject + "/" + condseq + "/" + buf;
          const std::string dir = out_root + "/" + rel;
          std::filesystem::create_directories(dir);
          for (int t = 0; t < spec.frames; ++t) {
            const auto img =
                detail::render_frame(spec, params, block.name, view, t, jitter);
            std::snprintf(buf, sizeof(buf), "%04d.pgm", t + 1);
            write_pgm(dir + "/" + buf, img);
          }
          SequenceEntry entry;
          entry.subject = subject;
          entry.condition = block.name;
          entry.seq = s;
          entry.view = view;
          entry.rel_path = rel;
          entry.frame_count = spec.frames;
          index.entries.push_back(std::move(entry));
        }
      }
    }
  }
  write_manifest(out_root + "/manifest.tsv", index);
  return index;
}

}  // namespace cstl
