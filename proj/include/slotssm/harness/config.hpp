#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slotssm/data/blinking.hpp"
#include "slotssm/layers/stack.hpp"

namespace slotssm {

// Flat experiment configuration. Serialized verbatim (fixed field order) into
// every checkpoint and metrics file; parse(serialize(c)) == c.
struct ExperimentConfig {
  // task & model
  std::string task = "video";       // video | blinking | oc_recon
  std::string variant = "slotssm";  // slotssm|single_state|slot_transformer|slot_rnn|oc_slotssm
  int64_t d_model = 64;
  int64_t heads = 4;
  int64_t layers = 2;
  int64_t slots = 6;
  int64_t n_state = 16;
  double expand = 1.25;
  int64_t conv_kw = 4;
  int64_t enc_layers = 3;
  int64_t dec_layers = 3;
  int64_t mlp_ratio = 4;
  std::string encoder_placement = "first_layer_only";
  std::string scan = "parallel";
  int64_t scan_chunk = 64;
  int64_t tk_cap = 6144;
  int64_t tok_patch = 8;
  int64_t dec_patch = 8;
  int64_t sub_patch = 4;
  int64_t sbd_base = 8;
  int64_t sbd_ch = 64;

  // data
  std::string data;
  std::string eval_data;
  int64_t image_hw = 32;
  int64_t balls = 3;
  int64_t blink_t = 6;
  int64_t blink_p = 4;
  std::string blink_rule = "earliest";
  int64_t clip_t = 20;
  int64_t context = 10;
  int64_t horizon = 20;
  int64_t oc_t = 4;

  // optimization
  int64_t batch = 16;
  int64_t steps = 5000;
  double lr = 8e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  int64_t eval_every = 1000;
  int64_t eval_episodes = 16;
  int64_t checkpoint_every = 0;  // 0: final only

  std::string out_dir = "out";
  std::string dtype = "f32";  // f32 | f64
  std::string resume;         // checkpoint path to continue from

  // field table keeps serialize/parse/flags in one place
  template <class F>
  void fields(F&& f) {
    f("task", task);
    f("variant", variant);
    f("d_model", d_model);
    f("heads", heads);
    f("layers", layers);
    f("slots", slots);
    f("n_state", n_state);
    f("expand", expand);
    f("conv_kw", conv_kw);
    f("enc_layers", enc_layers);
    f("dec_layers", dec_layers);
    f("mlp_ratio", mlp_ratio);
    f("encoder_placement", encoder_placement);
    f("scan", scan);
    f("scan_chunk", scan_chunk);
    f("tk_cap", tk_cap);
    f("tok_patch", tok_patch);
    f("dec_patch", dec_patch);
    f("sub_patch", sub_patch);
    f("sbd_base", sbd_base);
    f("sbd_ch", sbd_ch);
    f("data", data);
    f("eval_data", eval_data);
    f("image_hw", image_hw);
    f("balls", balls);
    f("blink_t", blink_t);
    f("blink_p", blink_p);
    f("blink_rule", blink_rule);
    f("clip_t", clip_t);
    f("context", context);
    f("horizon", horizon);
    f("oc_t", oc_t);
    f("batch", batch);
    f("steps", steps);
    f("lr", lr);
    f("weight_decay", weight_decay);
    f("beta1", beta1);
    f("beta2", beta2);
    f("adam_eps", adam_eps);
    f("clip_norm", clip_norm);
    f("seed", seed);
    f("eval_every", eval_every);
    f("eval_episodes", eval_episodes);
    f("checkpoint_every", checkpoint_every);
    f("out_dir", out_dir);
    f("dtype", dtype);
    f("resume", resume);
  }

  std::string serialize() {
    std::ostringstream oss;
    oss.precision(17);
    fields([&](const char* k, auto& v) { oss << k << "=" << v << "\n"; });
    return oss.str();
  }

  void set(const std::string& key, const std::string& value) {
    bool found = false;
    fields([&](const char* k, auto& v) {
      if (key != k) return;
      found = true;
      using V = std::decay_t<decltype(v)>;
      if constexpr (std::is_same_v<V, std::string>) {
        v = value;
      } else if constexpr (std::is_same_v<V, double>) {
        v = std::stod(value);
      } else if constexpr (std::is_same_v<V, uint64_t>) {
        v = std::stoull(value);
      } else {
        v = std::stoll(value);
      }
    });
    if (!found) fail("config: unknown key '", key, "'");
  }

  void apply_text(const std::string& text) {
    std::istringstream iss(text);
    std::string line;
    while (std::getline(iss, line)) {
      if (line.empty() || line[0] == '#') continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos) fail("config: malformed line '", line, "'");
      set(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("config: cannot read '", path, "'");
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str());
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    c.apply_text(text);
    return c;
  }

  StackConfig stack_config() const {
    StackConfig s;
    s.variant = variant_from_string(variant);
    s.layers = layers;
    s.slots = s.variant == Variant::SingleState ? 1 : slots;
    s.d_model = d_model;
    s.heads = heads;
    s.n_state = n_state;
    s.expand = expand;
    s.conv_kw = conv_kw;
    s.enc_layers = enc_layers;
    s.mlp_ratio = mlp_ratio;
    s.encoder_placement = encoder_placement;
    s.scan = scan_method_from_string(scan);
    s.scan_chunk = scan_chunk;
    s.tk_cap = tk_cap;
    // long enough for the blinking sequence lengths and video clips
    s.t_max = std::max<int64_t>(4096, (blink_t - 1) * blink_p * blink_p + 8);
    return s;
  }

  // full validation before any filesystem or allocation work
  void validate() const {
    if (task != "video" && task != "blinking" && task != "oc_recon")
      fail("config: unknown task '", task, "'");
    stack_config().validate();
    if (task == "oc_recon" && variant != "oc_slotssm")
      fail("config: oc_recon requires variant=oc_slotssm");
    if (task != "oc_recon" && variant == "oc_slotssm")
      fail("config: oc_slotssm is the reconstruction variant; use task=oc_recon");
    if (image_hw < 8) fail("config: image_hw too small");
    if (tok_patch < 1 || image_hw % tok_patch) fail("config: image_hw % tok_patch != 0");
    if (dec_patch < 1 || image_hw % dec_patch) fail("config: image_hw % dec_patch != 0");
    if (task == "blinking") {
      if (blink_t < 2) fail("config: blink_t must be >= 2");
      if (image_hw % blink_p) fail("config: image_hw % blink_p != 0");
      int64_t patch_px = image_hw / blink_p;
      int64_t sp = std::min(sub_patch, patch_px);
      if (patch_px % sp) fail("config: blinking patch size not divisible by sub_patch");
    }
    if (task == "video" && clip_t < 2) fail("config: clip_t must be >= 2 for teacher forcing");
    if (batch < 1 || steps < 0) fail("config: bad batch/steps");
    if (lr <= 0) fail("config: lr must be positive");
    if (dtype != "f32" && dtype != "f64") fail("config: dtype must be f32|f64");
    if (eval_every < 0 || eval_episodes < 0 || checkpoint_every < 0)
      fail("config: negative cadence");
  }
};

}  // namespace slotssm
