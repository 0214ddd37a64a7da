#include "coltran/training.h"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "coltran/errors.h"
#include "coltran/ops.h"

namespace coltran {

namespace {

constexpr std::string_view kMagic = "coltran-checkpoint 1";
constexpr std::string_view kEndMarker = "end";

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("invalid number for " + std::string(key) + ": '" + std::string(value) + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(value) + "'");
  }
  return out;
}

void put_float_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_float_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape_field(const std::string& field) {
  Shape s;
  std::stringstream ss(field);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(static_cast<std::size_t>(parse_uint("shape", part)));
  if (s.empty()) throw CheckpointError("empty tensor shape in manifest");
  return s;
}

struct StageBatch {
  std::vector<GrayscaleImage> gray_lo, gray_hi;
  std::vector<CoarseImage> coarse;
  std::vector<RgbImage> rgb_lo, rgb_hi;
};

StageBatch make_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  StageBatch b;
  for (auto i : idx) {
    const auto& ex = data.examples[i];
    b.gray_lo.push_back(ex.gray_lo);
    b.gray_hi.push_back(ex.gray_hi);
    b.coarse.push_back(ex.coarse);
    b.rgb_lo.push_back(ex.rgb_lo);
    b.rgb_hi.push_back(ex.rgb_hi);
  }
  return b;
}

/// Runs the shared step loop. `evaluate` returns the stage objective for a
/// batch and fills the NLL fields of a log row.
template <typename T, typename Eval>
TrainResult run_loop(Stage stage, ParamStore<T>& params, const Dataset& data, const TrainConfig& cfg, Eval evaluate,
                     bool stop_on_ar, const LogSink& sink) {
  RmsProp<T> opt(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps);
  Ema<T> ema(params, cfg.ema_decay);
  BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed + 1);
  TrainResult result;
  auto log = [&](const LogRow& row) {
    result.log.push_back(row);
    if (sink) sink(row);
  };
  auto stop = [&](const LogRow& row) {
    return cfg.stop_below && (stop_on_ar ? row.nll_ar : row.loss) < *cfg.stop_below;
  };

  std::size_t step = 0;
  bool stopped = false;
  for (; step < cfg.steps; ++step) {
    const auto batch = make_batch(data, sampler.next());
    LogRow row;
    row.stage = stage;
    row.step = step;
    auto loss = evaluate(batch, row);
    row.loss = static_cast<double>(loss.item());
    if (step % cfg.eval_every == 0) {
      log(row);
      if (stop(row)) {
        stopped = true;
        break;
      }
    }
    params.zero_grad();
    loss.backward();
    opt.step(params);
    ema.update(params);
  }
  if (!stopped) {
    NoGradGuard no_grad;
    const auto batch = make_batch(data, sampler.next());
    LogRow row;
    row.stage = stage;
    row.step = step;
    row.loss = static_cast<double>(evaluate(batch, row).item());
    if (result.log.empty() || result.log.back().step != step) log(row);
  }
  result.checkpoint.step = step;
  result.checkpoint.raw = export_weights(params);
  result.checkpoint.ema = export_weights(params, ema.shadow());
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) throw ConfigError("rmsprop_decay must lie in [0, 1)");
  if (!(rmsprop_eps > 0.0)) throw ConfigError("rmsprop_eps must be positive");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
}

bool apply_train_key(TrainConfig& c, std::string_view key, std::string_view value) {
  if (key == "lambda") c.lambda = parse_double(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
  else if (key == "rmsprop_decay") c.rmsprop_decay = parse_double(key, value);
  else if (key == "rmsprop_eps") c.rmsprop_eps = parse_double(key, value);
  else if (key == "ema_decay") c.ema_decay = parse_double(key, value);
  else if (key == "batch_size") c.batch_size = parse_uint(key, value);
  else if (key == "steps") c.steps = parse_uint(key, value);
  else if (key == "eval_every") c.eval_every = parse_uint(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "stop_below") c.stop_below = parse_double(key, value);
  else return false;
  return true;
}

double total_loss(double nll_ar, double nll_parallel, double nll_color_up, double nll_spatial_up, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  return (1.0 - lambda) * nll_ar + lambda * nll_parallel + nll_color_up + nll_spatial_up;
}

template <typename T>
Tensor<T> core_objective(const CoreLosses<T>& losses, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  return add(scale(losses.autoregressive, static_cast<T>(1.0 - lambda)),
             scale(losses.parallel, static_cast<T>(lambda)));
}

template <typename T>
RmsProp<T>::RmsProp(double learning_rate, double decay, double eps)
    : lr_(learning_rate), decay_(decay), eps_(eps) {}

template <typename T>
void RmsProp<T>::step(ParamStore<T>& params) {
  if (second_moment_.empty()) {
    for (const auto& p : params) second_moment_.emplace_back(p.value.numel(), T{0});
  }
  if (second_moment_.size() != params.size()) throw ContractError("optimizer bound to a different parameter set");
  std::size_t i = 0;
  for (const auto& p : params) {
    auto& v = second_moment_[i++];
    if (!p.value.has_grad()) continue;
    Tensor<T> w = p.value;
    auto data = w.mutable_data();
    const auto g = w.grad();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double gk = g[k];
      const double vk = decay_ * v[k] + (1.0 - decay_) * gk * gk;
      v[k] = static_cast<T>(vk);
      data[k] = static_cast<T>(data[k] - lr_ * gk / (std::sqrt(vk) + eps_));
    }
  }
  ++steps_;
}

template <typename T>
Ema<T>::Ema(const ParamStore<T>& params, double decay) : decay_(decay) {
  for (const auto& p : params) shadow_.emplace_back(p.value.data().begin(), p.value.data().end());
}

template <typename T>
void Ema<T>::update(const ParamStore<T>& params) {
  if (shadow_.size() != params.size()) throw ContractError("EMA bound to a different parameter set");
  std::size_t i = 0;
  for (const auto& p : params) {
    auto& s = shadow_[i++];
    const auto w = p.value.data();
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = decay_ * s[k] + (1.0 - decay_) * w[k];
  }
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::core: return "core";
    case Stage::color_up: return "color_up";
    case Stage::spatial_up: return "spatial_up";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "core") return Stage::core;
  if (name == "color_up") return Stage::color_up;
  if (name == "spatial_up") return Stage::spatial_up;
  throw ConfigError("unknown stage '" + std::string(name) + "' (expected core, color_up or spatial_up)");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream manifest;
  std::string payload;
  manifest << kMagic << '\n';
  manifest << "stage " << stage_name(ckpt.stage) << '\n';
  manifest << "step " << ckpt.step << '\n';
  for (const auto& [k, v] : to_key_values(ckpt.model)) manifest << "config " << k << '=' << v << '\n';
  auto emit = [&](std::string_view set, const std::vector<NamedArray>& arrays) {
    for (const auto& a : arrays) {
      if (shape_numel(a.shape) != a.values.size()) {
        throw CheckpointError("tensor " + a.name + " holds " + std::to_string(a.values.size()) +
                              " values for shape " + shape_str(a.shape));
      }
      manifest << "tensor " << set << ' ' << a.name << ' ' << shape_field(a.shape) << ' ' << payload.size() << ' '
               << a.values.size() << '\n';
      for (float v : a.values) put_float_le(payload, v);
    }
  };
  emit("raw", ckpt.raw);
  emit("ema", ckpt.ema);
  manifest << kEndMarker << '\n';

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const auto text = manifest.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw CheckpointError("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw CheckpointError(path.string() + " is not a checkpoint");

  struct Entry {
    std::string set, name;
    Shape shape;
    std::size_t offset, count;
  };
  Checkpoint ckpt;
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == kEndMarker) {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "stage") {
      std::string s;
      ls >> s;
      ckpt.stage = parse_stage(s);
    } else if (tag == "step") {
      ls >> ckpt.step;
    } else if (tag == "config") {
      std::string kv;
      ls >> kv;
      const auto eq = kv.find('=');
      if (eq == std::string::npos || !apply_model_key(ckpt.model, kv.substr(0, eq), kv.substr(eq + 1))) {
        throw CheckpointError("bad config line in manifest: " + line);
      }
    } else if (tag == "tensor") {
      Entry e;
      std::string shape;
      ls >> e.set >> e.name >> shape >> e.offset >> e.count;
      if (!ls || (e.set != "raw" && e.set != "ema")) throw CheckpointError("bad tensor line in manifest: " + line);
      e.shape = parse_shape_field(shape);
      if (shape_numel(e.shape) != e.count) throw CheckpointError("tensor " + e.name + " count disagrees with shape");
      entries.push_back(std::move(e));
    } else {
      throw CheckpointError("unknown manifest line: " + line);
    }
  }
  if (!ended) throw CheckpointError("truncated manifest in " + path.string());
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& e : entries) {
    if (e.offset + 4 * e.count > payload.size()) throw CheckpointError("tensor " + e.name + " runs past the payload");
    NamedArray a{e.name, e.shape, std::vector<float>(e.count)};
    for (std::size_t i = 0; i < e.count; ++i) a.values[i] = get_float_le(payload.data() + e.offset + 4 * i);
    (e.set == "raw" ? ckpt.raw : ckpt.ema).push_back(std::move(a));
  }
  return ckpt;
}

template <typename T>
std::vector<NamedArray> export_weights(const ParamStore<T>& params) {
  std::vector<NamedArray> out;
  for (const auto& p : params) {
    const auto d = p.value.data();
    out.push_back({p.name, p.value.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

template <typename T>
std::vector<NamedArray> export_weights(const ParamStore<T>& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw ContractError("weight values do not match the parameter set");
  std::vector<NamedArray> out;
  std::size_t i = 0;
  for (const auto& p : params) {
    const auto& v = values[i++];
    out.push_back({p.name, p.value.shape(), std::vector<float>(v.begin(), v.end())});
  }
  return out;
}

template <typename T>
void import_weights(ParamStore<T>& params, const std::vector<NamedArray>& weights) {
  std::size_t i = 0;
  for (const auto& p : params) {
    if (i >= weights.size()) throw CheckpointError("checkpoint lacks tensor " + p.name);
    const auto& a = weights[i++];
    if (a.name != p.name) {
      throw CheckpointError("tensor " + p.name + " expected, checkpoint holds " + a.name);
    }
    if (a.shape != p.value.shape()) {
      throw CheckpointError("tensor " + p.name + " has shape " + shape_str(a.shape) + " in checkpoint, model expects " +
                            shape_str(p.value.shape()));
    }
  }
  if (i != weights.size()) throw CheckpointError("checkpoint has extra tensor " + weights[i].name);
  i = 0;
  for (const auto& p : params) {
    Tensor<T> w = p.value;
    const auto& a = weights[i++];
    std::copy(a.values.begin(), a.values.end(), w.mutable_data().begin());
  }
}

std::string log_header() { return "step\tnll_ar\tnll_parallel\tloss"; }

std::string format_log_row(const LogRow& row) {
  std::ostringstream os;
  os << row.step << '\t' << std::setprecision(6) << std::fixed;
  if (row.stage == Stage::core) os << row.nll_ar << '\t' << row.nll_parallel;
  else os << "-\t-";
  os << '\t' << row.loss;
  return os.str();
}

TrainResult train_stage(Stage stage, const ModelConfig& model, const Dataset& data, const TrainConfig& cfg,
                        const LogSink& sink) {
  cfg.validate();
  model.validate();
  if (data.empty()) throw ConfigError("training dataset is empty");
  TrainResult result;
  switch (stage) {
    case Stage::core: {
      ColTranCore<float> net(model, cfg.seed);
      result = run_loop(
          stage, net.params(), data, cfg,
          [&](const StageBatch& b, LogRow& row) {
            auto l = net.losses(b.gray_lo, b.coarse);
            row.nll_ar = l.autoregressive.item();
            row.nll_parallel = l.parallel.item();
            return core_objective(l, cfg.lambda);
          },
          true, sink);
      break;
    }
    case Stage::color_up: {
      Upsampler<float> net(UpsamplerKind::color, model, cfg.seed);
      result = run_loop(
          stage, net.params(), data, cfg,
          [&](const StageBatch& b, LogRow&) {
            return upsampler_nll(color_upsample(net, b.coarse, b.gray_lo), b.rgb_lo);
          },
          false, sink);
      break;
    }
    case Stage::spatial_up: {
      Upsampler<float> net(UpsamplerKind::spatial, model, cfg.seed);
      result = run_loop(
          stage, net.params(), data, cfg,
          [&](const StageBatch& b, LogRow&) {
            return upsampler_nll(spatial_upsample(net, b.rgb_lo, b.gray_hi), b.rgb_hi);
          },
          false, sink);
      break;
    }
  }
  result.checkpoint.stage = stage;
  result.checkpoint.model = model;
  return result;
}

template <typename T>
CoreNll evaluate_core(const ColTranCore<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("evaluation dataset is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  CoreNll total;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto b = make_batch(data, idx);
    const auto n = model.nll(b.gray_lo, b.coarse);
    total.autoregressive += n.autoregressive * static_cast<double>(idx.size());
    total.parallel += n.parallel * static_cast<double>(idx.size());
  }
  total.autoregressive /= static_cast<double>(data.size());
  total.parallel /= static_cast<double>(data.size());
  return total;
}

template <typename T>
double evaluate_upsampler(const Upsampler<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("evaluation dataset is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto b = make_batch(data, idx);
    const auto logits = model.kind() == UpsamplerKind::color ? color_upsample(model, b.coarse, b.gray_lo)
                                                             : spatial_upsample(model, b.rgb_lo, b.gray_hi);
    const auto& target = model.kind() == UpsamplerKind::color ? b.rgb_lo : b.rgb_hi;
    total += static_cast<double>(upsampler_nll(logits, target).item()) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

std::vector<SweepRow> ablation_sweep(const ModelConfig& model, const DatasetSplit& data, const TrainConfig& cfg,
                                     const std::vector<std::string>& presets) {
  if (data.holdout.empty()) throw ConfigError("ablation sweep needs a non-empty holdout set");
  std::vector<SweepRow> rows;
  for (const auto& name : presets) {
    ModelConfig m = model;
    m.ablation = ablation_preset(name);
    const auto trained = train_stage(Stage::core, m, data.train, cfg);
    ColTranCore<float> net(m, cfg.seed);
    import_weights(net.params(), trained.checkpoint.raw);
    rows.push_back({name, evaluate_core(net, data.holdout, cfg.batch_size)});
  }
  return rows;
}

#define COLTRAN_INSTANTIATE_TRAINING(T)                                                                      \
  template Tensor<T> core_objective(const CoreLosses<T>&, double);                                           \
  template class RmsProp<T>;                                                                                 \
  template class Ema<T>;                                                                                     \
  template std::vector<NamedArray> export_weights(const ParamStore<T>&);                                     \
  template std::vector<NamedArray> export_weights(const ParamStore<T>&, const std::vector<std::vector<double>>&);\
  template void import_weights(ParamStore<T>&, const std::vector<NamedArray>&);                              \
  template CoreNll evaluate_core(const ColTranCore<T>&, const Dataset&, std::size_t);                        \
  template double evaluate_upsampler(const Upsampler<T>&, const Dataset&, std::size_t);

COLTRAN_INSTANTIATE_TRAINING(float)
COLTRAN_INSTANTIATE_TRAINING(double)

}  // namespace coltran
