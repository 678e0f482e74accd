#pragma once

#include <chrono>
#include <filesystem>

#include "slotssm/core/optim.hpp"
#include "slotssm/data/dataset_io.hpp"
#include "slotssm/harness/metrics.hpp"
#include "slotssm/harness/models.hpp"
#include "slotssm/util/ppm.hpp"

namespace slotssm {

// Append-only CSV: '#'-prefixed config snapshot, then a header row, then one
// row per eval. wall_s is the one column exempt from determinism claims.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& path, const std::string& config_text,
                const std::vector<std::string>& columns) {
    f_ = std::fopen(path.c_str(), "w");
    if (!f_) fail("metrics: cannot open '", path, "'");
    std::istringstream iss(config_text);
    std::string line;
    while (std::getline(iss, line)) std::fprintf(f_, "# %s\n", line.c_str());
    std::fprintf(f_, "step,wall_s,train_loss");
    for (const auto& c : columns) std::fprintf(f_, ",%s", c.c_str());
    std::fprintf(f_, "\n");
    std::fflush(f_);
  }
  ~MetricsWriter() {
    if (f_) std::fclose(f_);
  }
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(MetricsWriter&& o) noexcept {
    if (f_) std::fclose(f_);
    f_ = o.f_;
    o.f_ = nullptr;
    return *this;
  }

  void row(int64_t step, double wall_s, double train_loss, const std::vector<double>& vals) {
    if (!f_) return;
    std::fprintf(f_, "%lld,%.3f,%.8g", static_cast<long long>(step), wall_s, train_loss);
    for (double v : vals) std::fprintf(f_, ",%.8g", v);
    std::fprintf(f_, "\n");
    std::fflush(f_);
  }

 private:
  std::FILE* f_ = nullptr;
};

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

// grayscale [0,1] frames of one clip window; bouncing data is white-on-black
// so channel 0 carries everything
template <typename T>
void append_gray_frames(const Episode& ep, int64_t t0, int64_t t_len, std::vector<T>& out) {
  int64_t px = ep.h * ep.w;
  for (int64_t t = t0; t < t0 + t_len; ++t)
    for (int64_t i = 0; i < px; ++i)
      out.push_back(static_cast<T>(ep.frames[static_cast<size_t>((t * px + i) * 3)]) / T(255));
}

template <typename T>
void append_rgb_frames(const Episode& ep, int64_t t0, int64_t t_len, std::vector<T>& out) {
  int64_t n = ep.h * ep.w * 3;
  for (int64_t t = t0; t < t0 + t_len; ++t)
    for (int64_t i = 0; i < n; ++i)
      out.push_back(static_cast<T>(ep.frames[static_cast<size_t>(t * n + i)]) / T(255));
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct RolloutEval {
  std::vector<double> per_step_mse;
  double mean_mse = 0;
};

// MSE between predicted future frames (step-major [horizon][B][H*W], values in
// [0,1]) and ground truth frames context..context+horizon of each episode.
template <typename T>
RolloutEval rollout_mse_from_preds(const std::vector<T>& preds,
                                   const std::vector<Episode>& episodes, int64_t b,
                                   int64_t context, int64_t horizon) {
  RolloutEval out;
  int64_t px = episodes[0].h * episodes[0].w;
  out.per_step_mse.assign(static_cast<size_t>(horizon), 0.0);
  for (int64_t w = 0; w < horizon; ++w) {
    double acc = 0;
    for (int64_t e = 0; e < b; ++e) {
      const auto& ep = episodes[static_cast<size_t>(e)];
      for (int64_t i = 0; i < px; ++i) {
        double gt = static_cast<double>(ep.frames[static_cast<size_t>(((context + w) * px + i) * 3)]) / 255.0;
        double pv = static_cast<double>(preds[static_cast<size_t>((w * b + e) * px + i)]);
        acc += (pv - gt) * (pv - gt);
      }
    }
    out.per_step_mse[static_cast<size_t>(w)] = acc / static_cast<double>(b * px);
    out.mean_mse += out.per_step_mse[static_cast<size_t>(w)];
  }
  out.mean_mse /= static_cast<double>(horizon);
  return out;
}

// Feeds `context` ground-truth frames, then rolls `horizon` steps on its own
// sigmoid outputs. MSE is computed on [0,1] images per future step.
template <typename T>
RolloutEval rollout_eval(const VideoModel<T>& model, const std::vector<Episode>& episodes,
                         int64_t context, int64_t horizon, int64_t max_eps,
                         const std::string& ppm_dir = "") {
  int64_t b = std::min<int64_t>(max_eps, static_cast<int64_t>(episodes.size()));
  if (b < 1) fail("rollout: no evaluation episodes");
  int64_t hw = model.cfg.image_hw, px = hw * hw;
  for (int64_t e = 0; e < b; ++e)
    if (episodes[static_cast<size_t>(e)].t < context + horizon)
      fail("rollout: episode length ", episodes[static_cast<size_t>(e)].t,
           " shorter than context+horizon = ", context + horizon);

  bool recurrent = model.stack.cfg.variant != Variant::SlotTransformer;
  std::vector<T> preds;  // [B, horizon, H, W]
  preds.reserve(static_cast<size_t>(b * horizon * px));

  if (recurrent) {
    auto state = model.stack.make_state(b);
    Tensor<T> slots;
    std::vector<T> frame(static_cast<size_t>(b * px));
    for (int64_t t = 0; t < context; ++t) {
      frame.clear();
      for (int64_t e = 0; e < b; ++e)
        append_gray_frames(episodes[static_cast<size_t>(e)], t, 1, frame);
      slots = model.stack.forward(model.tokens(frame, b, 1), &state, t);
    }
    for (int64_t w = 0; w < horizon; ++w) {
      int64_t k = slots.dim(2);
      auto pred = model.decode_frame(slots.with_shape({b, k, model.cfg.d_model}));
      preds.insert(preds.end(), pred.begin(), pred.end());
      if (w + 1 < horizon)
        slots = model.stack.forward(model.tokens(pred, b, 1), &state, context + w);
    }
  } else {
    // no recurrent mode: re-run the full prefix each step
    std::vector<T> history;
    for (int64_t e = 0; e < b; ++e) history.reserve(static_cast<size_t>(b * (context + horizon) * px));
    std::vector<std::vector<T>> per_ep(static_cast<size_t>(b));
    for (int64_t e = 0; e < b; ++e)
      append_gray_frames(episodes[static_cast<size_t>(e)], 0, context, per_ep[static_cast<size_t>(e)]);
    for (int64_t w = 0; w < horizon; ++w) {
      int64_t t_now = context + w;
      std::vector<T> flat;
      flat.reserve(static_cast<size_t>(b * t_now * px));
      for (int64_t e = 0; e < b; ++e)
        flat.insert(flat.end(), per_ep[static_cast<size_t>(e)].begin(), per_ep[static_cast<size_t>(e)].end());
      auto slots = model.stack.forward(model.tokens(flat, b, t_now));
      auto last = slice(slots, 1, t_now - 1, 1);
      auto pred = model.decode_frame(last.with_shape({b, slots.dim(2), model.cfg.d_model}));
      preds.insert(preds.end(), pred.begin(), pred.end());
      for (int64_t e = 0; e < b; ++e)
        per_ep[static_cast<size_t>(e)].insert(per_ep[static_cast<size_t>(e)].end(),
                                              pred.begin() + e * px, pred.begin() + (e + 1) * px);
    }
    // preds above are stored per step as [B, H, W]; fix ordering below
  }

  RolloutEval out = rollout_mse_from_preds(preds, episodes, b, context, horizon);

  if (!ppm_dir.empty()) {
    // side-by-side strip for episode 0: ground truth on top, prediction below
    std::filesystem::create_directories(ppm_dir);
    const auto& ep = episodes[0];
    std::vector<uint8_t> strip(static_cast<size_t>(2 * hw * horizon * hw * 3), 0);
    for (int64_t w = 0; w < horizon; ++w)
      for (int64_t y = 0; y < hw; ++y)
        for (int64_t x = 0; x < hw; ++x) {
          uint8_t gt = ep.frames[static_cast<size_t>((((context + w) * hw + y) * hw + x) * 3)];
          auto pv = static_cast<uint8_t>(std::min<double>(
              255.0,
              std::max<double>(0.0, 255.0 * static_cast<double>(preds[static_cast<size_t>((w * b) * px + y * hw + x)]))));
          for (int c = 0; c < 3; ++c) {
            strip[static_cast<size_t>(((y) * horizon * hw + w * hw + x) * 3 + c)] = gt;
            strip[static_cast<size_t>(((hw + y) * horizon * hw + w * hw + x) * 3 + c)] = pv;
          }
        }
    write_ppm(ppm_dir + "/rollout_strip.ppm", strip.data(), 2 * hw, horizon * hw);
  }
  return out;
}

struct BlinkEval {
  double ce = 0;
  double color_acc = 0;       // majority-vote per-ball color accuracy
  double white_frac = 0;      // accuracy of the always-white baseline
  double geometry_iou = 0;    // foreground IoU, colors ignored
};

template <typename T>
BlinkEval blinking_eval(const BlinkingModel<T>& model, const std::vector<Episode>& episodes,
                        BlinkRule rule, int64_t balls, int64_t max_eps) {
  int64_t n = std::min<int64_t>(max_eps, static_cast<int64_t>(episodes.size()));
  if (n < 1) fail("blinking_eval: no episodes");
  int64_t hw = model.cfg.image_hw, px = hw * hw;
  int64_t tc = model.cfg.blink_t - 1;
  BlinkEval out;
  int64_t ball_total = 0, ball_correct = 0, ball_white = 0;
  int64_t inter = 0, uni = 0;
  for (int64_t e = 0; e < n; ++e) {
    const auto& ep = episodes[static_cast<size_t>(e)];
    std::vector<T> ctx;
    append_rgb_frames(ep, 0, tc, ctx);
    auto logits = model.forward_logits(ctx, 1);
    auto target = model.target_patch_classes(ep.frames.data() + (ep.t - 1) * px * 3);
    out.ce += ce_with_logits(logits.with_shape({px, ColorPalette::kClasses}), target).item();
    auto pred = model.predict_classes(logits);  // [H, W] classes, image layout
    auto final_colors = resolve_final_colors(ep.color_log, balls, rule);
    const uint8_t* tmask = ep.masks.data() + (ep.t - 1) * px;
    for (int64_t b = 0; b < balls; ++b) {
      // majority vote over the ball's visible region in the target
      std::array<int64_t, ColorPalette::kClasses> votes{};
      int64_t region = 0;
      for (int64_t i = 0; i < px; ++i)
        if (tmask[i] == b + 1) {
          votes[static_cast<size_t>(pred[static_cast<size_t>(i)])]++;
          region++;
        }
      if (region == 0) continue;  // fully occluded
      int32_t winner = 0;
      for (int32_t c = 1; c < ColorPalette::kClasses; ++c)
        if (votes[static_cast<size_t>(c)] > votes[static_cast<size_t>(winner)]) winner = c;
      ball_total++;
      if (winner == final_colors[static_cast<size_t>(b)]) ball_correct++;
      if (final_colors[static_cast<size_t>(b)] == ColorPalette::kWhite) ball_white++;
    }
    for (int64_t i = 0; i < px; ++i) {
      bool p_fg = pred[static_cast<size_t>(i)] != ColorPalette::kBackground;
      bool g_fg = tmask[i] != 0;
      inter += p_fg && g_fg;
      uni += p_fg || g_fg;
    }
  }
  out.ce /= static_cast<double>(n);
  out.color_acc = ball_total ? static_cast<double>(ball_correct) / static_cast<double>(ball_total) : 0;
  out.white_frac = ball_total ? static_cast<double>(ball_white) / static_cast<double>(ball_total) : 0;
  out.geometry_iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct TrainOutcome {
  double final_loss = 0;
  std::string checkpoint_path;
};

namespace detail {

// optimizer + step counter persistence shares the parameter names
template <typename T>
void snapshot_opt(Checkpoint& ck, const ParamRegistry<T>& reg, AdamW<T>& opt) {
  for (size_t i = 0; i < reg.items.size(); ++i) {
    CheckpointTensor m, v;
    m.shape = reg.items[i].second->shape();
    v.shape = m.shape;
    m.data.assign(opt.moment1(i).begin(), opt.moment1(i).end());
    v.data.assign(opt.moment2(i).begin(), opt.moment2(i).end());
    ck.tensors.emplace_back("adamw.m." + reg.items[i].first, std::move(m));
    ck.tensors.emplace_back("adamw.v." + reg.items[i].first, std::move(v));
  }
  CheckpointTensor s;
  s.shape = {1};
  s.data = {static_cast<float>(opt.step_count())};
  ck.tensors.emplace_back("adamw.step", std::move(s));
}

template <typename T>
void restore_opt(const Checkpoint& ck, const ParamRegistry<T>& reg, AdamW<T>& opt) {
  for (size_t i = 0; i < reg.items.size(); ++i) {
    const auto* m = ck.find("adamw.m." + reg.items[i].first);
    const auto* v = ck.find("adamw.v." + reg.items[i].first);
    if (!m || !v) fail("checkpoint: optimizer state for '", reg.items[i].first, "' missing");
    if (static_cast<int64_t>(m->data.size()) != reg.items[i].second->numel())
      fail("checkpoint: optimizer moment shape mismatch for '", reg.items[i].first, "'");
    opt.moment1(i).assign(m->data.begin(), m->data.end());
    opt.moment2(i).assign(v->data.begin(), v->data.end());
  }
  const auto* s = ck.find("adamw.step");
  if (!s) fail("checkpoint: step counter missing");
  opt.set_step_count(static_cast<int64_t>(s->data[0]));
}

}  // namespace detail

// One deterministic training driver shared by the three tasks. make_loss(step)
// must build the step's batch purely from (seed, step) so a resumed run
// replays the identical stream.
template <typename T, class LossFn, class EvalFn>
TrainOutcome run_training(ExperimentConfig cfg, ParamRegistry<T>& reg, LossFn&& make_loss,
                          EvalFn&& eval_cols, const std::vector<std::string>& eval_names) {
  std::filesystem::create_directories(cfg.out_dir);
  typename AdamW<T>::Hyper hp;
  hp.lr = static_cast<T>(cfg.lr);
  hp.beta1 = static_cast<T>(cfg.beta1);
  hp.beta2 = static_cast<T>(cfg.beta2);
  hp.eps = static_cast<T>(cfg.adam_eps);
  hp.weight_decay = static_cast<T>(cfg.weight_decay);
  AdamW<T> opt(reg.tensors(), hp);

  // resume/out_dir are session plumbing, not experiment identity: snapshots
  // of a resumed run and its uninterrupted twin must match
  ExperimentConfig snap = cfg;
  snap.resume.clear();
  snap.out_dir.clear();
  std::string config_text = snap.serialize();

  int64_t start_step = 0;
  if (!cfg.resume.empty()) {
    auto ck = load_checkpoint(cfg.resume);
    restore_params(reg, ck);
    detail::restore_opt(ck, reg, opt);
    start_step = opt.step_count();
    if (start_step > cfg.steps)
      fail("resume: checkpoint is at step ", start_step, ", beyond steps=", cfg.steps);
  }

  MetricsWriter metrics(cfg.out_dir + "/metrics.csv", config_text, eval_names);
  auto t0 = std::chrono::steady_clock::now();
  auto wall = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  auto save = [&](const std::string& name, AdamW<T>& o) {
    Checkpoint ck = snapshot_params(reg, config_text);
    detail::snapshot_opt(ck, reg, o);
    std::string path = cfg.out_dir + "/" + name;
    save_checkpoint(path, ck);
    return path;
  };

  double last_loss = 0;
  for (int64_t step = start_step; step < cfg.steps; ++step) {
    try {
      Tape<T> tape;
      Tensor<T> loss = make_loss(step);
      last_loss = static_cast<double>(loss.item());
      tape.backward(loss);
    } catch (const Error& e) {
      save("ckpt_diverged.ssck", opt);
      fail("training diverged at step ", step, ": ", e.what());
    }
    opt.clip_global_norm(static_cast<T>(cfg.clip_norm));
    opt.step();
    opt.zero_grad();

    int64_t done = step + 1;
    bool at_eval = cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.steps);
    if (at_eval) metrics.row(done, wall(), last_loss, eval_cols());
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps)
      save("ckpt_step" + std::to_string(done) + ".ssck", opt);
  }
  if (cfg.steps == 0 && cfg.eval_every > 0) metrics.row(0, wall(), 0.0, eval_cols());

  TrainOutcome out;
  out.final_loss = last_loss;
  out.checkpoint_path = save("ckpt_final.ssck", opt);
  return out;
}

// ---------------------------------------------------------------------------
// per-task drivers
// ---------------------------------------------------------------------------

template <typename T>
TrainOutcome train_video(const ExperimentConfig& cfg) {
  auto ds = load_dataset(cfg.data);
  if (ds.episodes.empty()) fail("train: dataset '", cfg.data, "' is empty");
  for (auto& ep : ds.episodes)
    if (ep.t < cfg.clip_t) fail("train: episode length ", ep.t, " < clip_t ", cfg.clip_t);
  std::vector<Episode> eval_eps;
  if (!cfg.eval_data.empty()) eval_eps = load_dataset(cfg.eval_data).episodes;

  VideoModel<T> model(cfg);
  int64_t n = static_cast<int64_t>(ds.episodes.size());
  auto make_loss = [&, n](int64_t step) {
    CounterRng rng(cfg.seed, 0xB000 + static_cast<uint64_t>(step));
    std::vector<T> frames;
    frames.reserve(static_cast<size_t>(cfg.batch * cfg.clip_t * cfg.image_hw * cfg.image_hw));
    for (int64_t i = 0; i < cfg.batch; ++i) {
      const auto& ep = ds.episodes[static_cast<size_t>(rng.uniform_int(n))];
      int64_t t0 = rng.uniform_int(ep.t - cfg.clip_t + 1);
      append_gray_frames(ep, t0, cfg.clip_t, frames);
    }
    return model.teacher_loss(frames, cfg.batch, cfg.clip_t);
  };
  auto eval_cols = [&]() -> std::vector<double> {
    if (eval_eps.empty()) return {std::nan("")};
    auto r = rollout_eval(model, eval_eps, cfg.context, cfg.horizon, cfg.eval_episodes);
    return {r.mean_mse};
  };
  return run_training<T>(cfg, model.params, make_loss, eval_cols, {"rollout_mse"});
}

template <typename T>
TrainOutcome train_blinking(const ExperimentConfig& cfg) {
  auto ds = load_dataset(cfg.data);
  if (ds.episodes.empty()) fail("train: dataset '", cfg.data, "' is empty");
  BlinkRule rule = blink_rule_from_string(ds.header.get("variant") == "blinking_most_frequent"
                                              ? "most_frequent"
                                              : "earliest");
  std::vector<Episode> eval_eps;
  if (!cfg.eval_data.empty()) eval_eps = load_dataset(cfg.eval_data).episodes;

  BlinkingModel<T> model(cfg);
  int64_t n = static_cast<int64_t>(ds.episodes.size());
  int64_t hw = cfg.image_hw, px = hw * hw, tc = cfg.blink_t - 1;
  auto make_loss = [&, n](int64_t step) {
    CounterRng rng(cfg.seed, 0xB000 + static_cast<uint64_t>(step));
    std::vector<T> ctx;
    ctx.reserve(static_cast<size_t>(cfg.batch * tc * px * 3));
    IntArray targets;
    targets.shape = {cfg.batch * px};
    targets.data.reserve(static_cast<size_t>(cfg.batch * px));
    for (int64_t i = 0; i < cfg.batch; ++i) {
      const auto& ep = ds.episodes[static_cast<size_t>(rng.uniform_int(n))];
      if (ep.t != cfg.blink_t) fail("train: episode T ", ep.t, " != blink_t ", cfg.blink_t);
      append_rgb_frames(ep, 0, tc, ctx);
      auto cls = model.target_patch_classes(ep.frames.data() + (ep.t - 1) * px * 3);
      targets.data.insert(targets.data.end(), cls.data.begin(), cls.data.end());
    }
    return model.loss(ctx, targets, cfg.batch);
  };
  auto eval_cols = [&]() -> std::vector<double> {
    if (eval_eps.empty()) return {std::nan(""), std::nan(""), std::nan(""), std::nan("")};
    auto r = blinking_eval(model, eval_eps, rule, cfg.balls, cfg.eval_episodes);
    return {r.ce, r.color_acc, r.white_frac, r.geometry_iou};
  };
  return run_training<T>(cfg, model.params, make_loss, eval_cols,
                         {"eval_ce", "color_acc", "white_frac", "geometry_iou"});
}

template <typename T>
TrainOutcome train_oc(const ExperimentConfig& cfg) {
  auto ds = load_dataset(cfg.data);
  if (ds.episodes.empty()) fail("train: dataset '", cfg.data, "' is empty");
  for (auto& ep : ds.episodes)
    if (ep.t < cfg.oc_t) fail("train: episode length ", ep.t, " < oc_t ", cfg.oc_t);
  std::vector<Episode> eval_eps;
  if (!cfg.eval_data.empty()) eval_eps = load_dataset(cfg.eval_data).episodes;

  OcModel<T> model(cfg);
  int64_t n = static_cast<int64_t>(ds.episodes.size());
  auto make_loss = [&, n](int64_t step) {
    CounterRng rng(cfg.seed, 0xB000 + static_cast<uint64_t>(step));
    std::vector<T> frames;
    for (int64_t i = 0; i < cfg.batch; ++i) {
      const auto& ep = ds.episodes[static_cast<size_t>(rng.uniform_int(n))];
      int64_t t0 = rng.uniform_int(ep.t - cfg.oc_t + 1);
      append_rgb_frames(ep, t0, cfg.oc_t, frames);
    }
    return model.reconstruct(frames, cfg.batch, cfg.oc_t).first;
  };
  auto eval_cols = [&]() -> std::vector<double> {
    if (eval_eps.empty()) return {std::nan("")};
    int64_t m = std::min<int64_t>(cfg.eval_episodes, static_cast<int64_t>(eval_eps.size()));
    std::vector<T> frames;
    for (int64_t i = 0; i < m; ++i) append_rgb_frames(eval_eps[static_cast<size_t>(i)], 0, cfg.oc_t, frames);
    auto [loss, dec] = model.reconstruct(frames, m, cfg.oc_t);
    return {static_cast<double>(loss.item())};
  };
  return run_training<T>(cfg, model.params, make_loss, eval_cols, {"recon_mse"});
}

template <typename T>
TrainOutcome train_dispatch(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.task == "video") return train_video<T>(cfg);
  if (cfg.task == "blinking") return train_blinking<T>(cfg);
  return train_oc<T>(cfg);
}

}  // namespace slotssm
