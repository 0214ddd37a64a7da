#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace coltran {

enum class CondMode { scale_and_shift, scale_only, shift_only };
enum class AttentionTargets { qkv, v_only };
enum class PoolMode { learnable, fixed_mean };

/// Switches for the conditional sub-layers. Fixed for a model's lifetime.
struct AblationFlags {
  bool cond_attention = true;
  bool cond_mlp = true;
  bool cond_norm = true;
  CondMode mode = CondMode::scale_and_shift;
  AttentionTargets attention_targets = AttentionTargets::qkv;
  PoolMode pool = PoolMode::learnable;

  bool any() const { return cond_attention || cond_mlp || cond_norm; }
  bool operator==(const AblationFlags&) const = default;
};

/// Named flag sets: full, no_cAtt, no_cMLP, no_cLN, scale_only, shift_only,
/// v_only, mean_pool, baseline_B (addition-only conditioning).
AblationFlags ablation_preset(std::string_view name);
const std::vector<std::string>& ablation_preset_names();

struct ModelConfig {
  std::size_t hidden = 64;  // D
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t mlp_width = 0;  // 0 selects 4 * hidden
  std::size_t core_height = 8;  // M
  std::size_t core_width = 8;   // N
  std::size_t image_height = 16;  // H
  std::size_t image_width = 16;   // W
  std::size_t vocab = 512;
  bool positional_embeddings = true;
  bool block_final_norm = false;
  bool per_channel_trunk = false;
  AblationFlags ablation;

  std::size_t ffn_width() const { return mlp_width ? mlp_width : 4 * hidden; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Flat key/value view (keys without a section prefix), used for config
/// files and checkpoint manifests.
std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& config);
/// Returns false if `key` is not a model key; throws ConfigError on a bad value.
bool apply_model_key(ModelConfig& config, std::string_view key, std::string_view value);

}  // namespace coltran
