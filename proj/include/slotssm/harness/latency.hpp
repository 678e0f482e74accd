#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>

#include "slotssm/harness/models.hpp"

namespace slotssm {

struct LatencyRow {
  std::string model;
  int64_t blink_t = 0, blink_p = 0, seq_len = 0;
  double median_ms = 0;
  bool ok = false;
  std::string note;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace detail

// Full-sequence forward latency of the blinking-task models at the given
// (T, P) grid, batch fixed (default 6), median over >= `reps` repetitions
// after warmup. Length-capped variants report an unavailable row instead of
// crashing.
inline std::vector<LatencyRow> bench_latency(const ExperimentConfig& base,
                                             const std::vector<std::string>& variants,
                                             const std::vector<std::pair<int64_t, int64_t>>& tps,
                                             int64_t reps, int64_t batch) {
  std::vector<LatencyRow> rows;
  for (const auto& variant : variants) {
    for (auto [t, p] : tps) {
      ExperimentConfig cfg = base;
      cfg.task = "blinking";
      cfg.variant = variant;
      cfg.blink_t = t;
      cfg.blink_p = p;
      LatencyRow row;
      row.model = variant;
      row.blink_t = t;
      row.blink_p = p;
      row.seq_len = (t - 1) * p * p;
      try {
        cfg.validate();
        BlinkingModel<float> model(cfg);
        CounterRng rng(7, 0);
        int64_t tc = t - 1, px = cfg.image_hw * cfg.image_hw;
        std::vector<float> ctx(static_cast<size_t>(batch * tc * px * 3));
        for (auto& v : ctx) v = static_cast<float>(rng.next_double());
        auto once = [&]() {
          auto t0 = std::chrono::steady_clock::now();
          auto logits = model.forward_logits(ctx, batch);
          (void)logits;
          return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
        };
        once();  // warmup
        std::vector<double> times;
        for (int64_t r = 0; r < reps; ++r) times.push_back(once());
        row.median_ms = detail::median_of(times);
        row.ok = true;
      } catch (const Error& e) {
        row.note = e.what();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

// Per-step recurrent latency of a SlotSSM stack: one sequence element at a
// time with carried state, median over a window of steps around `at`.
inline double recurrent_step_ms(const ExperimentConfig& base, int64_t at, int64_t window = 5) {
  ExperimentConfig cfg = base;
  cfg.task = "blinking";
  cfg.variant = "slotssm";
  cfg.validate();
  BlinkingModel<float> model(cfg);
  CounterRng rng(8, 0);
  auto tokens = rand_uniform<float>({6, 1, model.m_tokens, cfg.d_model}, rng, -1.0f, 1.0f);
  auto state = model.stack.make_state(6);
  std::vector<double> times;
  for (int64_t t = 0; t <= at + window; ++t) {
    auto t0 = std::chrono::steady_clock::now();
    auto slots = model.stack.forward(tokens, &state, 0);
    (void)slots;
    double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (t >= at - window && t <= at + window) times.push_back(ms);
  }
  return detail::median_of(times);
}

inline void write_latency_files(const std::vector<LatencyRow>& rows, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::FILE* f = std::fopen((out_dir + "/latency.csv").c_str(), "w");
  if (!f) fail("latency: cannot open output csv");
  std::fprintf(f, "model,T,P,L,median_ms,status\n");
  for (const auto& r : rows)
    std::fprintf(f, "%s,%lld,%lld,%lld,%.4f,%s\n", r.model.c_str(), static_cast<long long>(r.blink_t),
                 static_cast<long long>(r.blink_p), static_cast<long long>(r.seq_len),
                 r.median_ms, r.ok ? "ok" : "unavailable");
  std::fclose(f);
  // gnuplot-friendly grid: one column per model, NaN where unavailable
  std::vector<std::string> models;
  std::vector<int64_t> lengths;
  for (const auto& r : rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(lengths.begin(), lengths.end(), r.seq_len) == lengths.end())
      lengths.push_back(r.seq_len);
  }
  std::sort(lengths.begin(), lengths.end());
  f = std::fopen((out_dir + "/latency.dat").c_str(), "w");
  if (!f) fail("latency: cannot open latency.dat");
  std::fprintf(f, "# L");
  for (const auto& m : models) std::fprintf(f, " %s", m.c_str());
  std::fprintf(f, "\n");
  for (int64_t l : lengths) {
    std::fprintf(f, "%lld", static_cast<long long>(l));
    for (const auto& m : models) {
      double v = std::nan("");
      for (const auto& r : rows)
        if (r.model == m && r.seq_len == l && r.ok) v = r.median_ms;
      std::fprintf(f, " %.4f", v);
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
  f = std::fopen((out_dir + "/latency.gnuplot").c_str(), "w");
  if (!f) fail("latency: cannot open gnuplot script");
  std::fprintf(f,
               "set logscale xy\n"
               "set xlabel 'sequence length L'\n"
               "set ylabel 'median forward latency (ms)'\n"
               "set key left top\n"
               "plot");
  for (size_t i = 0; i < models.size(); ++i)
    std::fprintf(f, "%s 'latency.dat' using 1:%zu with linespoints title '%s'",
                 i ? "," : "", i + 2, models[i].c_str());
  std::fprintf(f, "\n");
  std::fclose(f);
}

}  // namespace slotssm
