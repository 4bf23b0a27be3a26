#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cstl/adam.hpp"
#include "cstl/param_set.hpp"

namespace cstl {

// Checkpoint format: "CSTLCKPT1" magic, then per tensor entry
//   u32 LE name length, name bytes,
//   u32 LE rank, u32 LE extent per axis,
//   f32 LE data.
// Model parameters come first in ParamSet order; optimizer state follows in
// the same scheme under adam.m.<name> / adam.v.<name> plus adam.step.
inline constexpr char kCheckpointMagic[] = "CSTLCKPT1";

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated u32");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_entry(std::ofstream& out, const std::string& name,
                        const Tensor<float>& t) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int a = 0; a < t.rank(); ++a) {
    write_u32(out, static_cast<std::uint32_t>(t.extent(a)));
  }
  // f32 little-endian; this build targets little-endian hosts
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamSet<float>& ps,
                            const AdamState<float>* adam = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 9);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    detail::write_entry(out, ps[i].name, ps[i].value);
  }
  if (adam) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      detail::write_entry(out, "adam.m." + ps[i].name, adam->m[i]);
      detail::write_entry(out, "adam.v." + ps[i].name, adam->v[i]);
    }
    Tensor<float> step({1});
    step(0) = static_cast<float>(adam->step);
    detail::write_entry(out, "adam.step", step);
  }
  if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

struct CheckpointData {
  std::vector<std::pair<std::string, Tensor<float>>> entries;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : entries) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[9];
  in.read(magic, 9);
  if (!in || std::memcmp(magic, kCheckpointMagic, 9) != 0) {
    throw std::runtime_error("read_checkpoint: bad magic in " + path);
  }
  CheckpointData data;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = detail::read_u32(in);
    if (rank < 1 || rank > 5) {
      throw std::runtime_error("read_checkpoint: bad rank for " + name);
    }
    std::vector<int> shape(rank);
    std::int64_t numel = 1;
    for (auto& e : shape) {
      e = static_cast<int>(detail::read_u32(in));
      numel *= e;
    }
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!in) throw std::runtime_error("read_checkpoint: truncated data for " + name);
    data.entries.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

// Restores parameter values (and optimizer state when present). Every model
// parameter must exist in the checkpoint with a matching shape.
inline void load_checkpoint(const CheckpointData& data, ParamSet<float>& ps,
                            AdamState<float>* adam = nullptr) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto* t = data.find(ps[i].name);
    if (!t) {
      throw std::runtime_error("load_checkpoint: missing parameter " + ps[i].name);
    }
    if (!(t->shape() == ps[i].value.shape())) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + ps[i].name);
    }
    ps[i].value = *t;
  }
  if (adam) {
    *adam = AdamState<float>::zeros_like(ps);
    const auto* step = data.find("adam.step");
    if (step) {
      adam->step = static_cast<std::int64_t>((*step)(0));
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto* m = data.find("adam.m." + ps[i].name);
        const auto* v = data.find("adam.v." + ps[i].name);
        if (!m || !v) {
          throw std::runtime_error("load_checkpoint: missing optimizer state for " +
                                   ps[i].name);
        }
        adam->m[i] = *m;
        adam->v[i] = *v;
      }
    }
  }
}

}  // namespace cstl
