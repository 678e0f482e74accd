#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "slotssm/core/common.hpp"
#include "slotssm/core/rng.hpp"
#include "slotssm/decoders/palette.hpp"

namespace slotssm {

struct BallWorldConfig {
  int64_t h = 32, w = 32;
  int64_t balls = 3;
  double radius_min = 3.0, radius_max = 4.5;
  double mass_min = 1.0, mass_max = 3.0;
  double speed_min = 0.5, speed_max = 1.5;  // pixels per frame
  int64_t steps = 20;
  int64_t substeps = 4;

  void validate() const {
    if (h < 4 || w < 4) fail("ballworld: arena too small");
    if (balls < 1) fail("ballworld: need at least one ball");
    if (radius_min <= 0 || radius_max < radius_min) fail("ballworld: bad radius range");
    if (mass_min <= 0 || mass_max < mass_min) fail("ballworld: bad mass range");
    if (2 * radius_max >= std::min(h, w)) fail("ballworld: balls do not fit in the arena");
    if (steps < 1 || substeps < 1) fail("ballworld: steps/substeps must be positive");
  }
};

struct BallState {
  double x, y, vx, vy;
  double mass, radius;
};

// One generated clip: frames, instance masks (0 = background, ball i -> i+1,
// later indices drawn on top), and the full per-frame ball trajectory.
struct Episode {
  int64_t t = 0, h = 0, w = 0;
  std::vector<uint8_t> frames;               // [T, H, W, 3]
  std::vector<uint8_t> masks;                // [T, H, W]
  std::vector<std::vector<BallState>> traj;  // [T][balls]
  // blinking benchmark only: one (ball, color) pair per context frame
  std::vector<std::pair<uint16_t, uint16_t>> color_log;
};

namespace detail {

inline void render_frame(const std::vector<BallState>& balls, const std::vector<int>& classes,
                         int64_t h, int64_t w, const ColorPalette& pal, uint8_t* rgb,
                         uint8_t* mask) {
  for (int64_t i = 0; i < h * w; ++i) {
    rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = 0;
    mask[i] = 0;
  }
  for (size_t bi = 0; bi < balls.size(); ++bi) {
    const auto& b = balls[bi];
    const auto& col = pal.colors[static_cast<size_t>(classes[bi])];
    int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y - b.radius)));
    int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(b.y + b.radius)));
    int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.x - b.radius)));
    int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(b.x + b.radius)));
    double r2 = b.radius * b.radius;
    for (int64_t py = y0; py <= y1; ++py)
      for (int64_t px = x0; px <= x1; ++px) {
        double dx = (static_cast<double>(px) + 0.5) - b.x;
        double dy = (static_cast<double>(py) + 0.5) - b.y;
        if (dx * dx + dy * dy <= r2) {
          int64_t at = py * w + px;
          rgb[at * 3] = col[0];
          rgb[at * 3 + 1] = col[1];
          rgb[at * 3 + 2] = col[2];
          mask[at] = static_cast<uint8_t>(bi + 1);
        }
      }
  }
}

inline void physics_substep(std::vector<BallState>& balls, double dt, double h, double w) {
  for (auto& b : balls) {
    b.x += b.vx * dt;
    b.y += b.vy * dt;
    // wall reflection preserves speed
    if (b.x - b.radius < 0) { b.x = 2 * b.radius - b.x; b.vx = -b.vx; }
    if (b.x + b.radius > w) { b.x = 2 * (w - b.radius) - b.x; b.vx = -b.vx; }
    if (b.y - b.radius < 0) { b.y = 2 * b.radius - b.y; b.vy = -b.vy; }
    if (b.y + b.radius > h) { b.y = 2 * (h - b.radius) - b.y; b.vy = -b.vy; }
  }
  // pairwise elastic collisions with positional de-penetration
  for (size_t i = 0; i < balls.size(); ++i)
    for (size_t j = i + 1; j < balls.size(); ++j) {
      auto& a = balls[i];
      auto& b = balls[j];
      double dx = a.x - b.x, dy = a.y - b.y;
      double dist2 = dx * dx + dy * dy;
      double rsum = a.radius + b.radius;
      if (dist2 >= rsum * rsum || dist2 == 0.0) continue;
      double dist = std::sqrt(dist2);
      double rvx = a.vx - b.vx, rvy = a.vy - b.vy;
      double along = rvx * dx + rvy * dy;
      if (along < 0) {  // approaching
        double msum = a.mass + b.mass;
        double coef = 2.0 * along / (msum * dist2);
        a.vx -= coef * b.mass * dx;
        a.vy -= coef * b.mass * dy;
        b.vx += coef * a.mass * dx;
        b.vy += coef * a.mass * dy;
      }
      double overlap = rsum - dist;
      double push = 0.5 * overlap / dist;
      a.x += dx * push;
      a.y += dy * push;
      b.x -= dx * push;
      b.y -= dy * push;
    }
}

inline std::vector<BallState> place_balls(const BallWorldConfig& cfg, CounterRng& rng) {
  std::vector<BallState> balls;
  for (int64_t i = 0; i < cfg.balls; ++i) {
    BallState b{};
    b.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    b.mass = rng.uniform(cfg.mass_min, cfg.mass_max);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      b.x = rng.uniform(b.radius, static_cast<double>(cfg.w) - b.radius);
      b.y = rng.uniform(b.radius, static_cast<double>(cfg.h) - b.radius);
      placed = true;
      for (const auto& o : balls) {
        double dx = b.x - o.x, dy = b.y - o.y;
        double need = b.radius + o.radius + 0.5;
        if (dx * dx + dy * dy < need * need) { placed = false; break; }
      }
    }
    if (!placed) fail("ballworld: cannot place ", cfg.balls, " balls without overlap (seed-local)");
    double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    double angle = rng.uniform(0.0, 6.283185307179586);
    b.vx = speed * std::cos(angle);
    b.vy = speed * std::sin(angle);
    balls.push_back(b);
  }
  return balls;
}

}  // namespace detail

// Deterministic per (cfg, seed): physics in 64-bit, rendering on the integer
// pixel grid with no anti-aliasing.
inline Episode gen_bouncing(const BallWorldConfig& cfg, uint64_t seed) {
  cfg.validate();
  CounterRng rng(seed, 1);
  Episode ep;
  ep.t = cfg.steps;
  ep.h = cfg.h;
  ep.w = cfg.w;
  ep.frames.resize(static_cast<size_t>(cfg.steps * cfg.h * cfg.w * 3));
  ep.masks.resize(static_cast<size_t>(cfg.steps * cfg.h * cfg.w));
  auto balls = detail::place_balls(cfg, rng);
  std::vector<int> white(static_cast<size_t>(cfg.balls), ColorPalette::kWhite);
  auto pal = ColorPalette::standard();
  double dt = 1.0 / static_cast<double>(cfg.substeps);
  for (int64_t t = 0; t < cfg.steps; ++t) {
    if (t > 0)
      for (int64_t s = 0; s < cfg.substeps; ++s)
        detail::physics_substep(balls, dt, static_cast<double>(cfg.h),
                                static_cast<double>(cfg.w));
    ep.traj.push_back(balls);
    detail::render_frame(balls, white, cfg.h, cfg.w, pal,
                         ep.frames.data() + t * cfg.h * cfg.w * 3,
                         ep.masks.data() + t * cfg.h * cfg.w);
  }
  return ep;
}

inline double kinetic_energy(const std::vector<BallState>& balls) {
  double e = 0;
  for (const auto& b : balls) e += 0.5 * b.mass * (b.vx * b.vx + b.vy * b.vy);
  return e;
}

}  // namespace slotssm
