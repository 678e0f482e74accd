#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <cstdlib>

#include "slotssm/harness/checks.hpp"
#include "slotssm/harness/latency.hpp"
#include "slotssm/harness/render.hpp"
#include "slotssm/harness/train.hpp"

using namespace slotssm;

namespace {

void apply_thread_env() {
  if (const char* env = std::getenv("SLOTSSM_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

// every config field becomes a --flag; --config files load first, flags win
void add_config_options(CLI::App* app, ExperimentConfig& cfg) {
  cfg.fields([&](const char* key, auto& v) {
    app->add_option(std::string("--") + key, v);
  });
  app->set_config("--config", "", "flat key=value config file");
}

struct GenDataArgs {
  std::string kind = "bouncing";  // bouncing | blinking_earliest | blinking_most_frequent
  std::string out;
  int64_t count = 256;
  uint64_t seed0 = 0;
  int64_t t = 20;
  int64_t hw = 32;
  int64_t balls = 3;
  int64_t p = 4;
  double radius_min = 3.0, radius_max = 4.5;
  double speed_min = 0.5, speed_max = 1.5;
};

int run_gen_data(const GenDataArgs& a) {
  if (a.out.empty()) fail("gen-data: --out is required");
  if (a.count < 1) fail("gen-data: --count must be positive");
  BallWorldConfig world;
  world.h = world.w = a.hw;
  world.balls = a.balls;
  world.steps = a.t;
  world.radius_min = a.radius_min;
  world.radius_max = a.radius_max;
  world.speed_min = a.speed_min;
  world.speed_max = a.speed_max;

  DatasetHeader h;
  h.kv["variant"] = a.kind;
  h.kv["T"] = std::to_string(a.t);
  h.kv["H"] = std::to_string(a.hw);
  h.kv["W"] = std::to_string(a.hw);
  h.kv["P"] = std::to_string(a.kind == "bouncing" ? 0 : a.p);
  h.kv["balls"] = std::to_string(a.balls);
  h.kv["palette"] = "bg000000,ffffff,ff0000,00ff00,0000ff,ffff00,ff00ff";
  h.kv["seed0"] = std::to_string(a.seed0);
  h.kv["count"] = std::to_string(a.count);

  if (a.kind == "bouncing") {
    world.validate();
    DatasetWriter wr(a.out, h);
    for (int64_t i = 0; i < a.count; ++i) wr.append(gen_bouncing(world, a.seed0 + static_cast<uint64_t>(i)));
  } else if (a.kind == "blinking_earliest" || a.kind == "blinking_most_frequent") {
    BlinkingConfig bc;
    bc.t = a.t;
    bc.p = a.p;
    bc.rule = a.kind == "blinking_earliest" ? BlinkRule::Earliest : BlinkRule::MostFrequent;
    bc.world = world;
    bc.world.steps = a.t;
    bc.validate();
    DatasetWriter wr(a.out, h);
    for (int64_t i = 0; i < a.count; ++i) wr.append(gen_blinking(bc, a.seed0 + static_cast<uint64_t>(i)));
  } else {
    fail("gen-data: unknown kind '", a.kind, "'");
  }
  std::printf("wrote %lld %s episodes to %s\n", static_cast<long long>(a.count), a.kind.c_str(),
              a.out.c_str());
  return 0;
}

int run_train(ExperimentConfig cfg) {
  cfg.validate();
  TrainOutcome out = cfg.dtype == "f64" ? train_dispatch<double>(cfg) : train_dispatch<float>(cfg);
  std::printf("final train loss %.6g, checkpoint %s\n", out.final_loss,
              out.checkpoint_path.c_str());
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, int64_t episodes) {
  auto ck = load_checkpoint(ckpt);
  ExperimentConfig cfg = ExperimentConfig::parse(ck.config_text);
  auto ds = load_dataset(data);
  if (cfg.task == "video") {
    VideoModel<float> model(cfg);
    restore_params(model.params, ck);
    auto r = rollout_eval(model, ds.episodes, cfg.context, cfg.horizon, episodes);
    std::printf("rollout_mse_mean %.8g\n", r.mean_mse);
    for (size_t w = 0; w < r.per_step_mse.size(); ++w)
      std::printf("rollout_mse_step %zu %.8g\n", w + 1, r.per_step_mse[w]);
  } else if (cfg.task == "blinking") {
    BlinkingModel<float> model(cfg);
    restore_params(model.params, ck);
    std::string var = ds.header.get("variant");
    BlinkRule rule =
        var == "blinking_most_frequent" ? BlinkRule::MostFrequent : BlinkRule::Earliest;
    auto r = blinking_eval(model, ds.episodes, rule, cfg.balls, episodes);
    std::printf("eval_ce %.8g\ncolor_acc %.6f\nwhite_frac %.6f\ngeometry_iou %.6f\n", r.ce,
                r.color_acc, r.white_frac, r.geometry_iou);
  } else {
    OcModel<float> model(cfg);
    restore_params(model.params, ck);
    int64_t m = std::min<int64_t>(episodes, static_cast<int64_t>(ds.episodes.size()));
    std::vector<float> frames;
    for (int64_t i = 0; i < m; ++i) append_rgb_frames(ds.episodes[static_cast<size_t>(i)], 0, cfg.oc_t, frames);
    auto [loss, dec] = model.reconstruct(frames, m, cfg.oc_t);
    std::printf("recon_mse %.8g\n", static_cast<double>(loss.item()));
  }
  return 0;
}

int run_rollout(const std::string& ckpt, const std::string& data, const std::string& out_dir,
                int64_t episodes) {
  auto ck = load_checkpoint(ckpt);
  ExperimentConfig cfg = ExperimentConfig::parse(ck.config_text);
  if (cfg.task != "video") fail("rollout: checkpoint task is '", cfg.task, "', expected video");
  VideoModel<float> model(cfg);
  restore_params(model.params, ck);
  auto ds = load_dataset(data);
  std::filesystem::create_directories(out_dir);
  auto r = rollout_eval(model, ds.episodes, cfg.context, cfg.horizon, episodes, out_dir);
  std::FILE* f = std::fopen((out_dir + "/rollout_mse.csv").c_str(), "w");
  if (!f) fail("rollout: cannot write csv");
  std::fprintf(f, "step,mse\n");
  for (size_t w = 0; w < r.per_step_mse.size(); ++w)
    std::fprintf(f, "%zu,%.8g\n", w + 1, r.per_step_mse[w]);
  std::fprintf(f, "mean,%.8g\n", r.mean_mse);
  std::fclose(f);
  std::printf("rollout_mse_mean %.8g (curve in %s/rollout_mse.csv)\n", r.mean_mse, out_dir.c_str());
  return 0;
}

int run_bench(ExperimentConfig base, const std::string& out_dir, const std::string& variants_csv,
              const std::string& lengths_csv, int64_t reps, int64_t batch, bool recurrent_check) {
  std::vector<std::string> variants;
  std::stringstream vs(variants_csv);
  std::string item;
  while (std::getline(vs, item, ',')) variants.push_back(item);
  std::vector<std::pair<int64_t, int64_t>> tps;
  std::stringstream ls(lengths_csv);
  while (std::getline(ls, item, ',')) {
    size_t x = item.find('x');
    if (x == std::string::npos) fail("bench-latency: lengths are TxP pairs, got '", item, "'");
    tps.emplace_back(std::stoll(item.substr(0, x)), std::stoll(item.substr(x + 1)));
  }
  auto rows = bench_latency(base, variants, tps, reps, batch);
  write_latency_files(rows, out_dir);
  for (const auto& r : rows)
    std::printf("%-18s T=%-3lld P=%-3lld L=%-5lld %s %.3f ms\n", r.model.c_str(),
                static_cast<long long>(r.blink_t), static_cast<long long>(r.blink_p),
                static_cast<long long>(r.seq_len), r.ok ? "ok " : "unavailable", r.median_ms);
  if (recurrent_check) {
    double ms10 = recurrent_step_ms(base, 10);
    double ms1000 = recurrent_step_ms(base, 1000);
    std::printf("recurrent per-step: t=10 %.4f ms, t=1000 %.4f ms, ratio %.3f\n", ms10, ms1000,
                ms1000 / ms10);
  }
  std::printf("wrote %s/latency.csv and latency.dat/.gnuplot\n", out_dir.c_str());
  return 0;
}

int run_gradcheck(int64_t seeds) {
  auto results = gradient_suite(seeds);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-34s max rel err %.3e  %s\n", r.name.c_str(), r.value, r.pass ? "ok" : "FAIL");
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

int run_scan_check(int64_t instances) {
  std::vector<int64_t> lengths = {1, 2, 3, 17, 256, 2048};
  double f32 = scan_equivalence<float>(instances, lengths, 1);
  double f64 = scan_equivalence<double>(std::max<int64_t>(instances / 5, 10), lengths, 2);
  std::printf("scan parallel-vs-sequential max |diff|: f32 %.3e (tol 1e-5), f64 %.3e (tol 1e-10)\n",
              f32, f64);
  return (f32 < 1e-5 && f64 < 1e-10) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_env();
  CLI::App app{"slot state space model laboratory"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate a dataset file");
  gen->add_option("--kind", gd.kind, "bouncing|blinking_earliest|blinking_most_frequent");
  gen->add_option("--out", gd.out)->required();
  gen->add_option("--count", gd.count);
  gen->add_option("--seed0", gd.seed0);
  gen->add_option("--t", gd.t);
  gen->add_option("--hw", gd.hw);
  gen->add_option("--balls", gd.balls);
  gen->add_option("--p", gd.p);
  gen->add_option("--radius-min", gd.radius_min);
  gen->add_option("--radius-max", gd.radius_max);
  gen->add_option("--speed-min", gd.speed_min);
  gen->add_option("--speed-max", gd.speed_max);

  ExperimentConfig cfg;
  auto* train = app.add_subcommand("train", "train a model");
  add_config_options(train, cfg);

  std::string ckpt, data, out_dir;
  int64_t episodes = 16, episode_idx = 0;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--episodes", episodes);

  auto* ro = app.add_subcommand("rollout", "autoregressive rollout with PPM export");
  ro->add_option("--ckpt", ckpt)->required();
  ro->add_option("--data", data)->required();
  ro->add_option("--out", out_dir)->required();
  ro->add_option("--episodes", episodes);

  ExperimentConfig bench_cfg;
  std::string bench_out = "bench", bench_variants = "slotssm,single_state,slot_transformer,slot_rnn";
  std::string bench_lengths = "6x4,11x4,6x8,11x8,6x16,11x16";
  int64_t bench_reps = 20, bench_batch = 6;
  bool bench_recurrent = false;
  auto* be = app.add_subcommand("bench-latency", "inference latency table");
  be->add_option("--out", bench_out);
  be->add_option("--variants", bench_variants);
  be->add_option("--lengths", bench_lengths, "comma list of TxP pairs");
  be->add_option("--reps", bench_reps);
  be->add_option("--batch", bench_batch);
  be->add_flag("--recurrent-check", bench_recurrent);
  be->add_option("--d_model", bench_cfg.d_model);
  be->add_option("--layers", bench_cfg.layers);
  be->add_option("--slots", bench_cfg.slots);

  auto* ra = app.add_subcommand("render-attn", "slot-assignment visualization");
  ra->add_option("--ckpt", ckpt)->required();
  ra->add_option("--data", data)->required();
  ra->add_option("--episode", episode_idx);
  ra->add_option("--out", out_dir)->required();

  int64_t gc_seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seeds", gc_seeds);

  int64_t sc_instances = 100;
  auto* sc = app.add_subcommand("scan-check", "parallel vs sequential scan property");
  sc->add_option("--instances", sc_instances);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(gd);
    if (train->parsed()) return run_train(cfg);
    if (ev->parsed()) return run_eval(ckpt, data, episodes);
    if (ro->parsed()) return run_rollout(ckpt, data, out_dir, episodes);
    if (be->parsed())
      return run_bench(bench_cfg, bench_out, bench_variants, bench_lengths, bench_reps,
                       bench_batch, bench_recurrent);
    if (ra->parsed()) {
      render_attention(ckpt, data, episode_idx, out_dir);
      return 0;
    }
    if (gc->parsed()) return run_gradcheck(gc_seeds);
    if (sc->parsed()) return run_scan_check(sc_instances);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
