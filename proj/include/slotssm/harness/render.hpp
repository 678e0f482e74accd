#pragma once

#include <filesystem>

#include "slotssm/harness/train.hpp"

namespace slotssm {

// fixed palette for slot ids in visualization exports
inline std::array<uint8_t, 3> slot_color(int32_t k) {
  static const std::array<std::array<uint8_t, 3>, 8> colors = {{{230, 60, 60},
                                                                {60, 180, 60},
                                                                {70, 90, 235},
                                                                {230, 200, 50},
                                                                {200, 70, 200},
                                                                {60, 200, 210},
                                                                {240, 140, 40},
                                                                {150, 150, 150}}};
  return colors[static_cast<size_t>(k) % colors.size()];
}

// upsample a patch-grid assignment [g, g] to pixels and color by slot id
inline std::vector<uint8_t> assignment_image(const int32_t* assign, int64_t g, int64_t patch_px) {
  int64_t hw = g * patch_px;
  std::vector<uint8_t> img(static_cast<size_t>(hw * hw * 3));
  for (int64_t gy = 0; gy < g; ++gy)
    for (int64_t gx = 0; gx < g; ++gx) {
      auto c = slot_color(assign[gy * g + gx]);
      for (int64_t py = 0; py < patch_px; ++py)
        for (int64_t px = 0; px < patch_px; ++px) {
          int64_t at = ((gy * patch_px + py) * hw + gx * patch_px + px) * 3;
          img[static_cast<size_t>(at)] = c[0];
          img[static_cast<size_t>(at + 1)] = c[1];
          img[static_cast<size_t>(at + 2)] = c[2];
        }
    }
  return img;
}

// Slot-assignment visualization for a trained checkpoint: decoder
// cross-attention argmax for the transformer-decoder tasks, alpha argmax for
// the OC variant. Writes PPM frames (inputs alongside assignments).
inline void render_attention(const std::string& ckpt_path, const std::string& data_path,
                             int64_t episode_idx, const std::string& out_dir) {
  auto ck = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = ExperimentConfig::parse(ck.config_text);
  auto ds = load_dataset(data_path);
  if (episode_idx < 0 || episode_idx >= static_cast<int64_t>(ds.episodes.size()))
    fail("render-attn: episode ", episode_idx, " out of range");
  const auto& ep = ds.episodes[static_cast<size_t>(episode_idx)];
  std::filesystem::create_directories(out_dir);
  int64_t hw = cfg.image_hw, px = hw * hw;

  if (cfg.task == "video") {
    VideoModel<float> model(cfg);
    restore_params(model.params, ck);
    std::vector<float> frames;
    append_gray_frames(ep, 0, ep.t, frames);
    auto toks = model.tokens(frames, 1, ep.t);
    auto slots = model.stack.forward(toks);
    int64_t k = slots.dim(2);
    for (int64_t t = 0; t < ep.t; ++t) {
      Tensor<float> attn;
      auto st = slice(slots, 1, t, 1).with_shape({1, k, cfg.d_model});
      model.dec.forward(st, &attn);
      auto assign = attention_argmax(attn);
      int64_t g = hw / cfg.dec_patch;
      auto img = assignment_image(assign.data.data(), g, cfg.dec_patch);
      write_ppm(out_dir + "/slots_t" + std::to_string(t) + ".ppm", img.data(), hw, hw);
      write_ppm(out_dir + "/input_t" + std::to_string(t) + ".ppm",
                ep.frames.data() + t * px * 3, hw, hw);
    }
  } else if (cfg.task == "blinking") {
    BlinkingModel<float> model(cfg);
    restore_params(model.params, ck);
    std::vector<float> ctx;
    append_rgb_frames(ep, 0, cfg.blink_t - 1, ctx);
    Tensor<float> attn;
    auto logits = model.forward_logits(ctx, 1, &attn);
    auto assign = attention_argmax(attn);
    int64_t g = hw / cfg.dec_patch;
    auto img = assignment_image(assign.data.data(), g, cfg.dec_patch);
    write_ppm(out_dir + "/slots_target.ppm", img.data(), hw, hw);
    auto pred = model.predict_classes(logits);
    auto pal = ColorPalette::standard();
    auto pred_rgb = render_classes(pred.data(), hw, hw, pal);
    write_ppm(out_dir + "/pred_target.ppm", pred_rgb.data(), hw, hw);
    write_ppm(out_dir + "/gt_target.ppm", ep.frames.data() + (ep.t - 1) * px * 3, hw, hw);
  } else if (cfg.task == "oc_recon") {
    OcModel<float> model(cfg);
    restore_params(model.params, ck);
    int64_t t = std::min<int64_t>(cfg.oc_t, ep.t);
    std::vector<float> frames;
    append_rgb_frames(ep, 0, t, frames);
    auto [loss, dec] = model.reconstruct(frames, 1, t);
    auto assign = alpha_argmax(dec.alpha);  // [T, H, W]
    for (int64_t ti = 0; ti < t; ++ti) {
      std::vector<uint8_t> img(static_cast<size_t>(px * 3));
      for (int64_t i = 0; i < px; ++i) {
        auto c = slot_color(assign.data[static_cast<size_t>(ti * px + i)]);
        img[static_cast<size_t>(i * 3)] = c[0];
        img[static_cast<size_t>(i * 3 + 1)] = c[1];
        img[static_cast<size_t>(i * 3 + 2)] = c[2];
      }
      write_ppm(out_dir + "/slots_t" + std::to_string(ti) + ".ppm", img.data(), hw, hw);
      write_ppm(out_dir + "/input_t" + std::to_string(ti) + ".ppm",
                ep.frames.data() + ti * px * 3, hw, hw);
    }
  } else {
    fail("render-attn: task '", cfg.task, "' has no attention/alpha head");
  }
}

}  // namespace slotssm
