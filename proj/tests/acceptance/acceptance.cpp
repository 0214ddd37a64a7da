// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "coltran/attention.h"
#include "coltran/conditional.h"
#include "coltran/core.h"
#include "coltran/data.h"
#include "coltran/image_io.h"
#include "coltran/ops.h"
#include "coltran/training.h"
#include "coltran/upsampler.h"
#include "test_support.h"

using namespace coltran;
using namespace coltran::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.str("");
      pass = false;
      detail << what << "; ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ModelConfig grid(std::size_t m, std::size_t n, std::size_t d, std::size_t vocab = 512) {
  ModelConfig c;
  c.hidden = d;
  c.heads = 2;
  c.blocks = 1;
  c.mlp_width = 2 * d;
  c.core_height = m;
  c.core_width = n;
  c.image_height = 2 * m;
  c.image_width = 2 * n;
  c.vocab = vocab;
  return c;
}

std::vector<GrayscaleImage> grays(std::size_t count, std::size_t m, std::size_t n, std::mt19937_64& rng) {
  std::vector<GrayscaleImage> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_gray(m, n, rng));
  return out;
}

template <typename T>
bool bit_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double e = 0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(double(a[i]) - double(b[i])));
  return e;
}

// 1 ---------------------------------------------------------------------------

struct FamilyResult {
  std::string name;
  int configs = 0;
  double worst = 0;
};

Outcome gradient_correctness() {
  Outcome out;
  constexpr int kConfigs = 12;
  constexpr double kH = 1e-5;
  const auto& presets = ablation_preset_names();
  std::vector<FamilyResult> families;
  auto record = [&](const std::string& name, double err) {
    auto it = std::find_if(families.begin(), families.end(), [&](const auto& f) { return f.name == name; });
    if (it == families.end()) it = families.insert(families.end(), {name, 0, 0.0});
    ++it->configs;
    it->worst = std::max(it->worst, err);
  };

  for (int seed = 0; seed < kConfigs; ++seed) {
    std::mt19937_64 rng(seed);
    const Axis axis = seed % 2 ? Axis::row : Axis::column;
    const MaskKind mask = seed % 3 ? MaskKind::causal : MaskKind::none;
    const std::size_t d = seed % 2 ? 8 : 12;
    const std::size_t heads = seed % 3 ? 2 : 4;

    {
      ParamStore<double> store;
      Initializer init(seed);
      auto p = make_attention_block(store, init, "blk", d, heads, 2 * d, seed % 4 == 0);
      perturb(store, seed + 10, 0.2);
      auto x = random_leaf({2, 3, 3, d}, rng);
      auto leaves = leaves_of(store);
      leaves.push_back(x);
      record("attention block",
             grad_check(leaves, [&] { return probe(attention_block(x, p, axis, mask), seed); }, seed, 12, kH)
                 .max_rel_error);
    }
    {
      const auto flags = ablation_preset(presets[seed % presets.size()]);
      ParamStore<double> store;
      Initializer init(seed);
      auto p = make_cond_block(store, init, "blk", d, heads, 2 * d, 6, flags, false);
      // Every conditional sub-layer is exercised regardless of the preset.
      auto full = make_cond_block(store, init, "full", d, heads, 2 * d, 6, AblationFlags{}, false);
      perturb(store, seed + 20, 0.3);
      auto x = random_leaf({2, 2, 3, d}, rng);
      auto c = random_leaf({2, 2, 3, d}, rng);
      auto leaves = leaves_of(store);
      leaves.push_back(x);
      leaves.push_back(c);
      record("cAtt", grad_check(leaves, [&] {
                       return probe(cond_self_attention(x, c, full.attention, axis, mask), seed);
                     }, seed, 10, kH).max_rel_error);
      record("cMLP",
             grad_check(leaves, [&] { return probe(cond_mlp(x, c, full.mlp), seed); }, seed + 1, 10, kH)
                 .max_rel_error);
      const auto& norm = std::get<CondNormParams<double>>(full.norm1);
      record("cLN",
             grad_check(leaves, [&] { return probe(cond_layer_norm(x, c, norm), seed); }, seed + 2, 10, kH)
                 .max_rel_error);
      record("conditional block", grad_check(leaves, [&] {
                                    return probe(cond_attention_block(x, c, c, p, axis, mask), seed);
                                  }, seed + 3, 10, kH).max_rel_error);
    }
    {
      auto cfg = grid(2, 3, 8, 6);
      cfg.ablation = ablation_preset(presets[(seed + 3) % presets.size()]);
      cfg.block_final_norm = seed % 4 == 1;
      ColTranCore<double> model(cfg, seed);
      perturb(model.params(), seed + 30, 0.2);
      auto e = random_leaf({1, 2, 3, 8}, rng);
      auto cg = random_leaf({1, 2, 3, 8}, rng);
      auto o = random_leaf({1, 2, 3, 8}, rng);
      auto leaves = leaves_of(model.params());
      leaves.insert(leaves.end(), {e, cg, o});
      record("outer decoder",
             grad_check(leaves, [&] { return probe(model.outer_decoder(e, cg), seed); }, seed, 6, kH).max_rel_error);
      record("inner decoder",
             grad_check(leaves, [&] { return probe(model.inner_decoder(o, e, cg), seed); }, seed + 1, 6, kH)
                 .max_rel_error);
      std::vector<Tensor<double>> head_leaves{cg};
      for (const auto& entry : model.params())
        if (entry.name.find("head.") != std::string::npos) head_leaves.push_back(entry.value);
      record("output heads",
             grad_check(head_leaves, [&] { return probe(model.parallel_logits(cg), seed); }, seed + 2, 24, kH)
                 .max_rel_error);
      auto g = grays(2, 2, 3, rng);
      std::vector<CoarseImage> c{random_coarse(2, 3, 6, rng), random_coarse(2, 3, 6, rng)};
      record("core objective", grad_check(leaves_of(model.params()), [&] {
                                 return core_objective(model.losses(g, c), 0.3);
                               }, seed + 3, 4, kH).max_rel_error);
    }
    {
      auto cfg = grid(2, 2, 8);
      cfg.per_channel_trunk = seed % 3 == 0;
      const auto kind = seed % 2 ? UpsamplerKind::color : UpsamplerKind::spatial;
      Upsampler<double> model(kind, cfg, seed);
      perturb(model.params(), seed + 40, 0.1);
      std::vector<GrayscaleImage> g_lo{random_gray(2, 2, rng)}, g_hi{random_gray(4, 4, rng)};
      std::vector<CoarseImage> c{random_coarse(2, 2, 512, rng)};
      std::vector<RgbImage> lo{random_rgb(2, 2, rng)}, hi{random_rgb(4, 4, rng)};
      record("upsampler stack", grad_check(leaves_of(model.params()), [&] {
                                  if (kind == UpsamplerKind::color)
                                    return upsampler_nll(color_upsample(model, c, g_lo), lo);
                                  return upsampler_nll(spatial_upsample(model, lo, g_hi), hi);
                                }, seed, 6, kH).max_rel_error);
    }
  }
  for (const auto& f : families) {
    out.require(f.configs >= 10 && f.worst < 1e-4,
                f.name + " max rel err " + std::to_string(f.worst) + " over " + std::to_string(f.configs));
  }
  if (out.pass) {
    double worst = 0;
    for (const auto& f : families) worst = std::max(worst, f.worst);
    out.detail << families.size() << " families x " << kConfigs << " configs, max rel err " << std::scientific
               << std::setprecision(2) << worst;
  }
  return out;
}

// 2 ---------------------------------------------------------------------------

Outcome causality() {
  Outcome out;
  auto cfg = grid(4, 4, 16);
  std::size_t identical = 0, pairs = 0;
  for (const char* preset : {"full", "baseline_B"}) {
    cfg.ablation = ablation_preset(preset);
    ColTranCore<float> model(cfg, 1);
    perturb(model.params(), 2, 0.15);
    std::mt19937_64 rng(3);
    auto g = grays(1, 4, 4, rng);
    std::vector<CoarseImage> c{random_coarse(4, 4, 512, rng)};
    NoGradGuard ng;
    const auto base_t = model.forward(g, c).autoregressive;
    const auto base = base_t.data();
    const std::size_t v = cfg.vocab;
    for (std::size_t site = 0; site < 16; ++site) {
      auto c2 = c;
      c2[0].indices[site] = static_cast<std::uint16_t>((c2[0].indices[site] + 1 + site * 31) % v);
      const auto moved_t = model.forward(g, c2).autoregressive;
      const auto moved = moved_t.data();
      std::size_t later_changed = 0;
      for (std::size_t pos = 0; pos < 16; ++pos) {
        const bool same = bit_equal(base.subspan(pos * v, v), moved.subspan(pos * v, v));
        if (pos <= site) {
          ++pairs;
          identical += same;
          out.require(same, std::string(preset) + " site " + std::to_string(site) + " leaks into " +
                                std::to_string(pos));
        } else {
          later_changed += !same;
        }
      }
      if (site < 15)
        out.require(later_changed > 0, std::string(preset) + " site " + std::to_string(site) +
                                           " changes no later position");
    }
  }
  if (out.pass) out.detail << identical << "/" << pairs << " (position, later-site) pairs bit-identical, 2 presets";
  return out;
}

// 3 ---------------------------------------------------------------------------

Outcome sampling_equivalence() {
  Outcome out;
  auto cfg = grid(4, 4, 16);
  ColTranCore<float> model(cfg, 5);
  perturb(model.params(), 6, 0.5);
  std::mt19937_64 rng(7);
  auto g = grays(2, 4, 4, rng);
  int matched = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::optional<std::size_t> k = seed % 4 == 3 ? std::optional<std::size_t>(8) : std::nullopt;
    const auto fast = sample_core(model, g, seed, k);
    const auto slow = naive_sample(model, g, seed, k.value_or(cfg.vocab));
    out.require(fast == slow, "seed " + std::to_string(seed) + " diverges");
    matched += fast == slow;
  }
  if (out.pass) out.detail << matched << "/20 seeds index-for-index, batch 2, vocab 512";
  return out;
}

// 4 ---------------------------------------------------------------------------

Outcome normalization() {
  Outcome out;
  auto cfg = grid(2, 2, 16, 4);
  ColTranCore<float> model(cfg, 8);
  perturb(model.params(), 9, 0.5);
  std::mt19937_64 rng(10);
  auto g = grays(1, 2, 2, rng);
  NoGradGuard ng;
  double total = 0, smallest = 1, largest = 0;
  for (int code = 0; code < 256; ++code) {
    std::vector<CoarseImage> c{CoarseImage(2, 2)};
    for (int p = 0; p < 4; ++p) c[0].indices[p] = static_cast<std::uint16_t>((code >> (2 * p)) & 3);
    const auto lp_t = log_softmax(model.forward(g, c).autoregressive);
    const auto lp = lp_t.data();
    double log_joint = 0;
    for (int p = 0; p < 4; ++p) log_joint += lp[p * 4 + c[0].indices[p]];
    const double prob = std::exp(log_joint);
    smallest = std::min(smallest, prob);
    largest = std::max(largest, prob);
    total += prob;
  }
  out.require(std::abs(total - 1.0) <= 1e-4, "sum " + std::to_string(total));
  out.require(largest / smallest > 1.5, "joint is nearly uniform, check has no power");
  if (out.pass) out.detail << "sum over 256 images = " << std::setprecision(9) << total;
  return out;
}

// 5 ---------------------------------------------------------------------------

Outcome init_equivalence() {
  Outcome out;
  double worst = 0;
  for (const auto& preset : ablation_preset_names()) {
    for (int seed = 0; seed < 3; ++seed) {
      ParamStore<float> plain_store, cond_store;
      Initializer a(seed), b(seed);
      auto plain = make_attention_block(plain_store, a, "blk", 16, 2, 32, seed == 2);
      auto cond = make_cond_block(cond_store, b, "blk", 16, 2, 32, 12, ablation_preset(preset), seed == 2);
      std::mt19937_64 rng(seed);
      auto x = random_tensor<float>({2, 3, 4, 16}, rng);
      auto c = random_tensor<float>({2, 3, 4, 16}, rng);
      for (auto axis : {Axis::row, Axis::column}) {
        for (auto mask : {MaskKind::none, MaskKind::causal}) {
          const auto y0 = attention_block(x, plain, axis, mask);
          const auto y1 = cond_attention_block(x, c, c, cond, axis, mask);
          worst = std::max(worst, max_abs_diff(y0.data(), y1.data()));
        }
      }
    }
  }
  for (const auto& preset : ablation_preset_names()) {
    auto cfg = grid(3, 3, 16);
    auto base_cfg = cfg;
    cfg.ablation = ablation_preset(preset);
    base_cfg.ablation = ablation_preset("baseline_B");
    ColTranCore<float> cond(cfg, 4), base(base_cfg, 4);
    // Weights present in both models move off their initial values together,
    // so the heads produce non-trivial logits.
    std::mt19937_64 noise(5);
    std::normal_distribution<float> dist(0.0f, 0.2f);
    for (const auto& e : base.params()) {
      if (!cond.params().contains(e.name)) continue;
      Tensor<float> dst = cond.params().get(e.name);
      Tensor<float> src = e.value;
      for (std::size_t i = 0; i < src.numel(); ++i) src.mutable_data()[i] += dist(noise);
      std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
    std::mt19937_64 rng(6);
    auto g = grays(2, 3, 3, rng);
    std::vector<CoarseImage> c{random_coarse(3, 3, 512, rng), random_coarse(3, 3, 512, rng)};
    NoGradGuard ng;
    const auto a = cond.forward(g, c), b = base.forward(g, c);
    worst = std::max(worst, max_abs_diff(a.autoregressive.data(), b.autoregressive.data()));
    worst = std::max(worst, max_abs_diff(a.parallel.data(), b.parallel.data()));
  }
  out.require(worst <= 1e-6, "max deviation " + std::to_string(worst));
  if (out.pass) out.detail << "blocks and cores, all 9 presets, max |diff| " << worst;
  return out;
}

// 6 ---------------------------------------------------------------------------

Outcome uniform_nll() {
  Outcome out;
  ModelConfig cfg;  // default sizes
  ColTranCore<float> model(cfg, 11);
  std::mt19937_64 rng(12);
  auto g = grays(2, cfg.core_height, cfg.core_width, rng);
  std::vector<CoarseImage> c{random_coarse(cfg.core_height, cfg.core_width, 512, rng),
                             random_coarse(cfg.core_height, cfg.core_width, 512, rng)};
  const auto nll = model.nll(g, c);
  out.require(std::abs(nll.autoregressive - 6.2383) <= 0.01, "nll_ar " + std::to_string(nll.autoregressive));
  out.require(std::abs(nll.parallel - 6.2383) <= 0.01, "nll_parallel " + std::to_string(nll.parallel));
  if (out.pass)
    out.detail << std::setprecision(7) << "nll_ar " << nll.autoregressive << ", nll_parallel " << nll.parallel;
  return out;
}

// 7 ---------------------------------------------------------------------------

std::array<double, 3> channel_mae(const std::vector<RgbImage>& a, const std::vector<RgbImage>& b) {
  std::array<double, 3> err{0, 0, 0};
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t p = 0; p < a[i].pixels.size() / 3; ++p, ++n)
      for (int k = 0; k < 3; ++k) err[k] += std::abs(int(a[i].pixels[p * 3 + k]) - int(b[i].pixels[p * 3 + k]));
  }
  for (auto& e : err) e /= static_cast<double>(n);
  return err;
}

Outcome overfit() {
  Outcome out;
  DatasetSpec spec;
  spec.core_height = spec.core_width = 8;
  spec.image_height = spec.image_width = 16;
  const auto data = make_dataset(synthetic_images(4, 16, 16, 7), spec);
  std::vector<GrayscaleImage> g_lo, g_hi;
  std::vector<CoarseImage> coarse;
  std::vector<RgbImage> rgb_lo, rgb_hi;
  for (const auto& e : data.examples) {
    g_lo.push_back(e.gray_lo);
    g_hi.push_back(e.gray_hi);
    coarse.push_back(e.coarse);
    rgb_lo.push_back(e.rgb_lo);
    rgb_hi.push_back(e.rgb_hi);
  }

  ModelConfig core_cfg;
  core_cfg.hidden = 64;
  core_cfg.heads = 4;
  core_cfg.blocks = 2;
  core_cfg.mlp_width = 128;
  core_cfg.core_height = core_cfg.core_width = 8;
  core_cfg.image_height = core_cfg.image_width = 16;
  TrainConfig train;
  train.learning_rate = 3e-4;
  train.steps = 2000;
  train.batch_size = 4;
  train.eval_every = 50;
  train.stop_below = 0.05;
  const auto t0 = Clock::now();
  const auto core_run = train_stage(Stage::core, core_cfg, data, train);
  const double core_time = seconds_since(t0);
  ColTranCore<float> core(core_cfg, 0);
  import_weights(core.params(), core_run.checkpoint.raw);
  const auto nll = core.nll(g_lo, coarse);
  out.require(nll.autoregressive < 0.05, "core nll_ar " + std::to_string(nll.autoregressive) + " after " +
                                             std::to_string(core_run.checkpoint.step) + " steps");
  out.require(core_time < 600, "core took " + std::to_string(core_time) + " s");

  auto up_cfg = core_cfg;
  up_cfg.hidden = 32;
  up_cfg.mlp_width = 64;
  up_cfg.blocks = 1;
  TrainConfig up_train;
  up_train.learning_rate = 3e-3;
  up_train.steps = 400;
  up_train.batch_size = 4;
  up_train.eval_every = 100;
  const auto color_run = train_stage(Stage::color_up, up_cfg, data, up_train);
  Upsampler<float> color(UpsamplerKind::color, up_cfg, 0);
  import_weights(color.params(), color_run.checkpoint.raw);
  const auto spatial_run = train_stage(Stage::spatial_up, up_cfg, data, up_train);
  Upsampler<float> spatial(UpsamplerKind::spatial, up_cfg, 0);
  import_weights(spatial.params(), spatial_run.checkpoint.raw);
  NoGradGuard ng;
  const auto color_mae = channel_mae(argmax_decode(color_upsample(color, coarse, g_lo)), rgb_lo);
  const auto spatial_mae = channel_mae(argmax_decode(spatial_upsample(spatial, rgb_lo, g_hi)), rgb_hi);
  for (int k = 0; k < 3; ++k) {
    out.require(color_mae[k] < 2, "color upsampler channel " + std::to_string(k) + " MAE " +
                                      std::to_string(color_mae[k]));
    out.require(spatial_mae[k] < 2, "spatial upsampler channel " + std::to_string(k) + " MAE " +
                                        std::to_string(spatial_mae[k]));
  }
  if (out.pass) {
    out.detail << std::setprecision(4) << "core nll_ar " << nll.autoregressive << " at step "
               << core_run.checkpoint.step << " (" << std::fixed << std::setprecision(1) << core_time
               << " s); MAE color " << std::setprecision(2) << std::max({color_mae[0], color_mae[1], color_mae[2]})
               << ", spatial " << std::max({spatial_mae[0], spatial_mae[1], spatial_mae[2]});
  }
  return out;
}

// 8 ---------------------------------------------------------------------------

Outcome toy_ablation() {
  Outcome out;
  DatasetSpec spec;
  spec.core_height = spec.core_width = 8;
  spec.image_height = spec.image_width = 16;
  const auto images = synthetic_images(200, 16, 16, 2024);
  const std::vector<RgbImage> train_images(images.begin(), images.begin() + 160);
  const std::vector<RgbImage> holdout_images(images.begin() + 160, images.end());
  const DatasetSplit split{make_dataset(train_images, spec), make_dataset(holdout_images, spec)};
  ModelConfig cfg;
  cfg.hidden = 32;
  cfg.heads = 4;
  cfg.blocks = 2;
  cfg.mlp_width = 64;
  cfg.core_height = cfg.core_width = 8;
  cfg.image_height = cfg.image_width = 16;
  TrainConfig train;
  train.steps = 200;
  train.batch_size = 8;
  train.eval_every = 200;
  const auto rows = ablation_sweep(cfg, split, train, {"full", "baseline_B"});
  const double full = rows.at(0).holdout.autoregressive, base = rows.at(1).holdout.autoregressive;
  out.require(full <= base, "full " + std::to_string(full) + " > baseline_B " + std::to_string(base));
  if (out.pass)
    out.detail << std::setprecision(4) << "holdout nll_ar full " << full << " vs baseline_B " << base << " after "
               << train.steps << " steps";
  std::cerr << "  toy ablation: full " << full << ", baseline_B " << base << "\n";
  return out;
}

// 9 ---------------------------------------------------------------------------

Outcome top_k() {
  Outcome out;
  auto cfg = grid(4, 4, 16);
  ColTranCore<float> model(cfg, 13);
  perturb(model.params(), 14, 0.5);
  std::mt19937_64 rng(15);
  std::size_t total_in = 0;
  for (std::size_t k : {4, 8}) {
    std::size_t checked = 0, inside = 0;
    for (std::uint64_t seed = 0; checked < 1000; ++seed) {
      auto g = grays(8, 4, 4, rng);
      const auto sampled = sample_core(model, g, seed * 100 + k, k);
      NoGradGuard ng;
      const auto logits_t = model.forward(g, sampled).autoregressive;
      const auto logits = logits_t.data();
      for (std::size_t b = 0; b < g.size() && checked < 1000; ++b) {
        for (std::size_t p = 0; p < 16 && checked < 1000; ++p, ++checked) {
          const float* row = logits.data() + (b * 16 + p) * cfg.vocab;
          const float chosen = row[sampled[b].indices[p]];
          std::size_t greater = 0;
          for (std::size_t i = 0; i < cfg.vocab; ++i) greater += row[i] > chosen;
          inside += greater < k;
        }
      }
    }
    out.require(inside == checked, "top_k " + std::to_string(k) + ": " + std::to_string(inside) + "/" +
                                       std::to_string(checked));
    total_in += inside;
  }
  if (out.pass) out.detail << total_in << "/2000 pixels inside their top-K sets (K = 4, 8)";
  return out;
}

// 10 --------------------------------------------------------------------------

Outcome quantization() {
  Outcome out;
  int roundtrip = 0;
  for (std::size_t idx = 0; idx < 512; ++idx) {
    CoarseImage c(1, 1);
    c.indices[0] = static_cast<std::uint16_t>(idx);
    roundtrip += quantize_coarse(dequantize_coarse(c)) == c;
  }
  out.require(roundtrip == 512, std::to_string(roundtrip) + "/512 indices roundtrip");
  int worst = 0;
  for (int r = 0; r < 256; ++r) {
    for (int g = 0; g < 256; ++g) {
      for (int b = 0; b < 256; ++b) {
        const auto levels = coarse_levels(coarse_index(std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)));
        const int values[3] = {r, g, b};
        for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(levels[k] * 32 + 16 - values[k]));
      }
    }
  }
  RgbImage all(256, 1);
  for (int v = 0; v < 256; ++v) all.pixels[v * 3] = all.pixels[v * 3 + 1] = all.pixels[v * 3 + 2] = std::uint8_t(v);
  const auto back = dequantize_coarse(quantize_coarse(all));
  for (std::size_t i = 0; i < all.pixels.size(); ++i)
    worst = std::max(worst, std::abs(int(back.pixels[i]) - int(all.pixels[i])));
  out.require(worst <= 16, "max error " + std::to_string(worst));
  if (out.pass) out.detail << "512/512 exact roundtrips, max channel error " << worst << " over 256^3 colors";
  return out;
}

// 11 --------------------------------------------------------------------------

Outcome ema_and_checkpoints() {
  Outcome out;
  double worst = 0;
  for (double d : {0.5, 0.9, 0.999}) {
    for (int n : {1, 10, 100, 1000}) {
      ParamStore<float> store;
      std::mt19937_64 rng(n);
      auto w = store.add("w", random_tensor<float>({64}, rng));
      Ema<float> ema(store, d);
      const auto s0 = ema.shadow()[0];
      const auto fresh = random_tensor<float>({64}, rng);
      std::copy(fresh.data().begin(), fresh.data().end(), w.mutable_data().begin());
      for (int i = 0; i < n; ++i) ema.update(store);
      for (std::size_t j = 0; j < 64; ++j) {
        const double expected = double(w.data()[j]) + std::pow(d, n) * (double(s0[j]) - double(w.data()[j]));
        worst = std::max(worst, std::abs(double(ema.shadow()[0][j]) - expected));
      }
    }
  }
  out.require(worst <= 1e-6, "EMA deviation " + std::to_string(worst));

  const auto dir = fs::temp_directory_path() / ("coltran_accept_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::size_t tensors = 0;
  auto roundtrip = [&](Stage stage, ParamStore<float>& params, const ModelConfig& cfg) {
    perturb(params, 21, 0.3);
    Ema<float> ema(params, 0.9);
    perturb(params, 22, 0.3);
    ema.update(params);
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.model = cfg;
    ckpt.step = 17;
    ckpt.raw = export_weights(params);
    ckpt.ema = export_weights(params, ema.shadow());
    const auto path = dir / (std::string(stage_name(stage)) + ".ckpt");
    save_checkpoint(ckpt, path);
    const auto back = load_checkpoint(path);
    bool same = back.stage == stage && back.step == 17 && to_key_values(back.model) == to_key_values(cfg) &&
                back.raw.size() == ckpt.raw.size() && back.ema.size() == ckpt.ema.size();
    for (std::size_t i = 0; same && i < ckpt.raw.size(); ++i) {
      same = back.raw[i].name == ckpt.raw[i].name && back.raw[i].shape == ckpt.raw[i].shape &&
             bit_equal<float>(back.raw[i].values, ckpt.raw[i].values) &&
             bit_equal<float>(back.ema[i].values, ckpt.ema[i].values);
      tensors += 2;
    }
    out.require(same, std::string(stage_name(stage)) + " checkpoint differs after roundtrip");
  };
  auto cfg = grid(4, 4, 16);
  ColTranCore<float> core(cfg, 1);
  Upsampler<float> color(UpsamplerKind::color, cfg, 2), spatial(UpsamplerKind::spatial, cfg, 3);
  roundtrip(Stage::core, core.params(), cfg);
  roundtrip(Stage::color_up, color.params(), cfg);
  roundtrip(Stage::spatial_up, spatial.params(), cfg);
  fs::remove_all(dir);
  if (out.pass)
    out.detail << "EMA max deviation " << std::scientific << std::setprecision(1) << worst << "; " << tensors
               << " tensors bit-exact across 3 stage checkpoints";
  return out;
}

// 12 --------------------------------------------------------------------------

Outcome cli_end_to_end() {
  Outcome out;
  const fs::path dir = fs::temp_directory_path() / ("coltran_accept_e2e_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string exe = COLTRAN_CLI;
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + exe + "\" " + args + " >> \"" + (dir / "cli.log").string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    out.require(rc == 0, "command failed: coltran " + args);
    return rc == 0;
  };

  {
    std::ofstream cfg(dir / "tiny.cfg");
    cfg << "data.source = " << (dir / "data").string() << "\n"
        << "data.holdout_count = 2\n"
        << "model.hidden = 16\nmodel.heads = 2\nmodel.blocks = 1\nmodel.mlp_width = 32\n"
        << "model.core_height = 4\nmodel.core_width = 4\nmodel.image_height = 8\nmodel.image_width = 8\n"
        << "train.steps = 30\ntrain.eval_every = 10\ntrain.batch_size = 4\ntrain.learning_rate = 0.003\n";
  }
  const std::string d = "\"" + dir.string() + "\"";
  bool ok = run("synth --out " + d + "/data --count 12 --height 8 --width 8 --seed 3");
  for (const char* stage : {"core", "color_up", "spatial_up"}) {
    ok = ok && run(std::string("train --stage ") + stage + " --config " + d + "/tiny.cfg --out " + d + "/ckpt");
  }
  if (ok) {
    const auto rgb = read_png_rgb(dir / "data" / "img_00000.png");
    write_png(dir / "gray.png", to_grayscale(rgb));
    ok = run("colorize --gray " + d + "/gray.png --ckpt-core " + d + "/ckpt/core.ckpt --ckpt-color " + d +
             "/ckpt/color_up.ckpt --ckpt-spatial " + d + "/ckpt/spatial_up.ckpt --samples 3 --seed 5 --out " + d +
             "/samples");
  }
  std::size_t valid = 0;
  if (ok) {
    for (int i = 0; i < 3; ++i) {
      const auto path = dir / "samples" / ("sample_" + std::to_string(i) + ".png");
      try {
        const auto img = read_png_rgb(path);
        valid += img.height == 8 && img.width == 8;
      } catch (const std::exception& e) {
        out.require(false, path.filename().string() + ": " + e.what());
      }
    }
    out.require(valid == 3, std::to_string(valid) + "/3 samples are valid 8x8 PNGs");
    std::size_t extra = 0;
    for (const auto& entry : fs::directory_iterator(dir / "samples")) extra += entry.path().extension() != ".png";
    out.require(extra == 0, "stray files left in the sample directory");
    ok = run("probmap --gray " + d + "/gray.png --ckpt-core " + d + "/ckpt/core.ckpt --out " + d + "/prob.png");
  }
  if (ok) {
    try {
      const auto map = read_png_gray(dir / "prob.png");
      out.require(map.height == 4 && map.width == 4, "probability map is " + std::to_string(map.height) + "x" +
                                                          std::to_string(map.width));
    } catch (const std::exception& e) {
      out.require(false, std::string("prob.png: ") + e.what());
    }
  }
  for (const char* stage : {"core", "color_up", "spatial_up"})
    out.require(fs::exists(dir / "ckpt" / (std::string(stage) + ".log")), std::string(stage) + ".log missing");
  if (out.pass) {
    out.detail << "synth, 3 train stages, colorize --samples 3 (" << valid << " valid 8x8 PNGs), probmap 4x4";
    fs::remove_all(dir);
  } else {
    out.detail << "artifacts kept in " << dir.string();
  }
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "causality", causality},
      {3, "sampling equivalence", sampling_equivalence},
      {4, "chain-rule normalization", normalization},
      {5, "init equivalence", init_equivalence},
      {6, "uniform-init NLL", uniform_nll},
      {7, "overfit", overfit},
      {8, "toy ablation direction", toy_ablation},
      {9, "top-K property", top_k},
      {10, "quantization", quantization},
      {11, "EMA exactness and checkpoint roundtrip", ema_and_checkpoints},
      {12, "end-to-end CLI", cli_end_to_end},
  };
  int failures = 0;
  const auto start = Clock::now();
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    bool pass = false;
    std::string detail;
    try {
      auto outcome = c.run();
      pass = outcome.pass;
      detail = outcome.detail.str();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    failures += !pass;
    std::printf("[%s] %2d %s: %s (%.1f s)\n", pass ? "PASS" : "FAIL", c.id, c.name, detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed in %.1f s\n", static_cast<int>(criteria.size()) - failures, criteria.size(),
              seconds_since(start));
  return failures == 0 ? 0 : 1;
}
