#pragma once

#include "slotssm/data/physics.hpp"

namespace slotssm {

enum class BlinkRule { Earliest, MostFrequent };

inline BlinkRule blink_rule_from_string(const std::string& s) {
  if (s == "earliest") return BlinkRule::Earliest;
  if (s == "most_frequent") return BlinkRule::MostFrequent;
  fail("unknown blinking rule '", s, "' (expected earliest|most_frequent)");
}

struct BlinkingConfig {
  int64_t t = 6;  // context frames = t-1, target is frame t
  int64_t p = 4;  // patch grid per side (sequence length L = (t-1)*p^2)
  BlinkRule rule = BlinkRule::Earliest;
  BallWorldConfig world;

  int64_t seq_len() const { return (t - 1) * p * p; }

  void validate() const {
    if (t < 2) fail("blinking: need at least one context frame (T >= 2)");
    if (p < 1 || world.h % p || world.w % p)
      fail("blinking: image size ", world.h, " not divisible by patch grid ", p);
    world.validate();
  }
};

// Final ball colors under the variant rule. log holds one (ball, color id)
// pair per context frame; color ids are 0..4 (the 5 non-white colors).
// Returns palette classes per ball; never-assigned balls stay white.
inline std::vector<int> resolve_final_colors(const std::vector<std::pair<uint16_t, uint16_t>>& log,
                                             int64_t balls, BlinkRule rule) {
  std::vector<int> out(static_cast<size_t>(balls), ColorPalette::kWhite);
  for (int64_t b = 0; b < balls; ++b) {
    int first_color = -1;
    std::array<int, 5> count{};
    std::array<int, 5> first_at{};
    first_at.fill(-1);
    for (size_t i = 0; i < log.size(); ++i) {
      if (log[i].first != b) continue;
      int c = log[i].second;
      if (first_color < 0) first_color = c;
      if (first_at[static_cast<size_t>(c)] < 0) first_at[static_cast<size_t>(c)] = static_cast<int>(i);
      count[static_cast<size_t>(c)]++;
    }
    if (first_color < 0) continue;  // never picked: stays white
    if (rule == BlinkRule::Earliest) {
      out[static_cast<size_t>(b)] = ColorPalette::kFirstBallColor + first_color;
    } else {
      // highest count; ties broken by earliest assignment among the tied
      int best = -1;
      for (int c = 0; c < 5; ++c) {
        if (count[static_cast<size_t>(c)] == 0) continue;
        if (best < 0 || count[static_cast<size_t>(c)] > count[static_cast<size_t>(best)] ||
            (count[static_cast<size_t>(c)] == count[static_cast<size_t>(best)] &&
             first_at[static_cast<size_t>(c)] < first_at[static_cast<size_t>(best)]))
          best = c;
      }
      out[static_cast<size_t>(b)] = ColorPalette::kFirstBallColor + best;
    }
  }
  return out;
}

// Context frames follow the bouncing physics with an independent (ball, color)
// draw per frame; the target frame renders the physics state at time T with
// the rule-resolved colors. Frames layout: [0 .. T-2] context, [T-1] target.
inline Episode gen_blinking(const BlinkingConfig& cfg, uint64_t seed) {
  cfg.validate();
  CounterRng rng(seed, 2);
  const auto& wc = cfg.world;
  Episode ep;
  ep.t = cfg.t;
  ep.h = wc.h;
  ep.w = wc.w;
  ep.frames.resize(static_cast<size_t>(cfg.t * wc.h * wc.w * 3));
  ep.masks.resize(static_cast<size_t>(cfg.t * wc.h * wc.w));
  auto balls = detail::place_balls(wc, rng);
  auto pal = ColorPalette::standard();
  double dt = 1.0 / static_cast<double>(wc.substeps);
  for (int64_t t = 0; t < cfg.t; ++t) {
    if (t > 0)
      for (int64_t s = 0; s < wc.substeps; ++s)
        detail::physics_substep(balls, dt, static_cast<double>(wc.h), static_cast<double>(wc.w));
    ep.traj.push_back(balls);
    std::vector<int> classes(static_cast<size_t>(wc.balls), ColorPalette::kWhite);
    if (t < cfg.t - 1) {
      // exactly one ball gets one of the 5 non-white colors, independently per frame
      auto ball = static_cast<uint16_t>(rng.uniform_int(wc.balls));
      auto color = static_cast<uint16_t>(rng.uniform_int(5));
      ep.color_log.emplace_back(ball, color);
      classes[ball] = ColorPalette::kFirstBallColor + color;
    } else {
      auto final_classes = resolve_final_colors(ep.color_log, wc.balls, cfg.rule);
      for (int64_t b = 0; b < wc.balls; ++b) classes[static_cast<size_t>(b)] = final_classes[static_cast<size_t>(b)];
    }
    detail::render_frame(balls, classes, wc.h, wc.w, pal,
                         ep.frames.data() + t * wc.h * wc.w * 3,
                         ep.masks.data() + t * wc.h * wc.w);
  }
  return ep;
}

}  // namespace slotssm
