#pragma once

// Stage-wise optimization: mixed core objective, RMSprop, EMA shadow
// weights, checkpoint files and the ablation sweep driver.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coltran/config.h"
#include "coltran/core.h"
#include "coltran/data.h"
#include "coltran/params.h"
#include "coltran/upsampler.h"

namespace coltran {

struct TrainConfig {
  double lambda = 0.01;
  double learning_rate = 3e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  double ema_decay = 0.999;
  std::size_t batch_size = 4;
  std::size_t steps = 100;
  std::size_t eval_every = 10;
  std::uint64_t seed = 0;
  /// Stop once the logged stage loss falls below this value.
  std::optional<double> stop_below;

  /// Throws ConfigError on out-of-range settings.
  void validate() const;
};

/// Returns false if `key` is not a training key; throws ConfigError on a bad value.
bool apply_train_key(TrainConfig& config, std::string_view key, std::string_view value);

/// (1 - lambda) * nll_ar + lambda * nll_parallel + nll_color_up + nll_spatial_up.
double total_loss(double nll_ar, double nll_parallel, double nll_color_up, double nll_spatial_up, double lambda);

template <typename T>
Tensor<T> core_objective(const CoreLosses<T>& losses, double lambda);

/// RMSprop without momentum; one second-moment buffer per parameter.
template <typename T>
class RmsProp {
 public:
  RmsProp(double learning_rate, double decay, double eps);
  /// Applies one update to every parameter holding a gradient.
  void step(ParamStore<T>& params);
  std::size_t steps_taken() const { return steps_; }

 private:
  double lr_, decay_, eps_;
  std::vector<std::vector<T>> second_moment_;
  std::size_t steps_ = 0;
};

/// Shadow copy of a parameter set, initialized to the current weights and
/// accumulated in double precision.
template <typename T>
class Ema {
 public:
  Ema(const ParamStore<T>& params, double decay);
  void update(const ParamStore<T>& params);
  const std::vector<std::vector<double>>& shadow() const { return shadow_; }

 private:
  double decay_;
  std::vector<std::vector<double>> shadow_;
};

enum class Stage { core, color_up, spatial_up };
std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

enum class WeightSet { raw, ema };

struct Checkpoint {
  Stage stage = Stage::core;
  ModelConfig model;
  std::size_t step = 0;
  std::vector<NamedArray> raw;
  std::vector<NamedArray> ema;

  const std::vector<NamedArray>& weights(WeightSet set) const { return set == WeightSet::ema ? ema : raw; }
};

/// Text manifest (config, step, tensor index with shapes and byte offsets),
/// a terminator line, then a little-endian float32 payload. Written through
/// a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<NamedArray> export_weights(const ParamStore<T>& params);
template <typename T>
std::vector<NamedArray> export_weights(const ParamStore<T>& params, const std::vector<std::vector<double>>& values);
/// Copies `weights` into `params`; names, order and shapes must match
/// exactly, otherwise CheckpointError names the first offending tensor.
template <typename T>
void import_weights(ParamStore<T>& params, const std::vector<NamedArray>& weights);

struct LogRow {
  Stage stage = Stage::core;
  std::size_t step = 0;
  double nll_ar = 0.0;        // core only
  double nll_parallel = 0.0;  // core only
  double loss = 0.0;          // stage objective
};

/// Tab-separated header and rows; upsampler rows print '-' for the core NLLs.
std::string log_header();
std::string format_log_row(const LogRow& row);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
};

using LogSink = std::function<void(const LogRow&)>;

/// Trains one stage independently from a freshly initialized model. Rows
/// are logged at step 0 (before any update), every eval_every steps and at
/// the last step, measured on the batch about to be used.
TrainResult train_stage(Stage stage, const ModelConfig& model, const Dataset& data, const TrainConfig& config,
                        const LogSink& sink = {});

/// Teacher-forced mean NLLs of a core over a dataset, in batches.
template <typename T>
CoreNll evaluate_core(const ColTranCore<T>& model, const Dataset& data, std::size_t batch_size);
template <typename T>
double evaluate_upsampler(const Upsampler<T>& model, const Dataset& data, std::size_t batch_size);

struct SweepRow {
  std::string preset;
  CoreNll holdout;
};

/// Trains a core per ablation preset with identical data, seeds and steps,
/// and reports teacher-forced holdout NLLs.
std::vector<SweepRow> ablation_sweep(const ModelConfig& model, const DatasetSplit& data,
                                     const TrainConfig& config, const std::vector<std::string>& presets);

}  // namespace coltran
