#pragma once

#include <stdexcept>
#include <string>

#include "cstl/checkpoint.hpp"
#include "cstl/model.hpp"

namespace cstl {

// Reconstructs the architecture a checkpoint was trained with from its
// parameter names and shapes. The input resolution is not recorded in the
// checkpoint and must come from the caller.
inline ModelConfig infer_model_config(const CheckpointData& data, int in_h,
                                      int in_w) {
  ModelConfig cfg;
  cfg.backbone.in_h = in_h;
  cfg.backbone.in_w = in_w;
  for (int layer = 1; layer <= 4; ++layer) {
    const auto* w = data.find("backbone.conv" + std::to_string(layer) + ".w");
    if (!w) throw std::runtime_error("checkpoint: missing backbone layer " +
                                     std::to_string(layer));
    cfg.backbone.channels[static_cast<std::size_t>(layer - 1)] = w->extent(0);
  }

  cfg.parts = 0;
  while (data.find(output_param_name(cfg.parts, "w")) != nullptr) ++cfg.parts;
  if (cfg.parts == 0) throw std::runtime_error("checkpoint: no output head");
  cfg.embed_dim = data.find(output_param_name(0, "w"))->extent(1);

  cfg.baseline = data.find("ata.pe.w") == nullptr;
  if (cfg.baseline) {
    cfg.num_classes = 2;  // unused by the baseline graph
    return cfg;
  }

  const int channels = cfg.backbone.channels.back();
  cfg.heads = data.find("ata.attn.wq")->extent(0);
  cfg.scale_short = data.find("mste.short.conv1.w") != nullptr;
  cfg.scale_long = data.find("mste.long.fc1.w") != nullptr;
  const int fused_in = data.find("ssfl.fuse.w")->extent(0);
  const int num_scales = fused_in / channels;
  cfg.scale_frame =
      num_scales - (cfg.scale_short ? 1 : 0) - (cfg.scale_long ? 1 : 0) == 1;
  if (data.find("ata.local.fc.w")) {
    cfg.local = LocalVariant::kFc;
  } else if (data.find("ata.local.att.fc1.w")) {
    cfg.local = LocalVariant::kAttention;
  } else {
    cfg.local = LocalVariant::kMax;
  }
  cfg.num_classes = data.find("ssfl.cls.w")->extent(1);
  return cfg;
}

// Builds a float model and loads the checkpoint weights into it.
inline CstlModel<float> model_from_checkpoint(const std::string& path,
                                              int in_h = 64, int in_w = 44) {
  const auto data = read_checkpoint(path);
  const auto cfg = infer_model_config(data, in_h, in_w);
  CstlModel<float> model(cfg, 0);
  load_checkpoint(data, model.params());
  return model;
}

}  // namespace cstl
