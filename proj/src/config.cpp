#include "coltran/config.h"

#include <charconv>
#include <map>

#include "coltran/errors.h"

namespace coltran {

namespace {

std::size_t parse_size(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean for " + std::string(key) + ": '" + std::string(value) + "'");
}

const char* mode_name(CondMode m) {
  switch (m) {
    case CondMode::scale_and_shift: return "scale_and_shift";
    case CondMode::scale_only: return "scale_only";
    case CondMode::shift_only: return "shift_only";
  }
  return "?";
}

}  // namespace

const std::vector<std::string>& ablation_preset_names() {
  static const std::vector<std::string> names = {
      "full", "no_cAtt", "no_cMLP", "no_cLN", "scale_only",
      "shift_only", "v_only", "mean_pool", "baseline_B"};
  return names;
}

AblationFlags ablation_preset(std::string_view name) {
  AblationFlags f;
  if (name == "full") return f;
  if (name == "no_cAtt") { f.cond_attention = false; return f; }
  if (name == "no_cMLP") { f.cond_mlp = false; return f; }
  if (name == "no_cLN") { f.cond_norm = false; return f; }
  if (name == "scale_only") { f.mode = CondMode::scale_only; return f; }
  if (name == "shift_only") { f.mode = CondMode::shift_only; return f; }
  if (name == "v_only") { f.attention_targets = AttentionTargets::v_only; return f; }
  if (name == "mean_pool") { f.pool = PoolMode::fixed_mean; return f; }
  if (name == "baseline_B") {
    f.cond_attention = f.cond_mlp = f.cond_norm = false;
    return f;
  }
  throw ConfigError("unknown ablation preset '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  }
  if (blocks == 0) throw ConfigError("blocks must be positive");
  if (core_height == 0 || core_width == 0) throw ConfigError("core resolution must be positive");
  if (image_height % core_height != 0 || image_width % core_width != 0 || image_height == 0 ||
      image_width == 0) {
    throw ConfigError("image resolution " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not an integer multiple of core resolution " + std::to_string(core_height) +
                      "x" + std::to_string(core_width));
  }
  if (image_height / core_height != image_width / core_width) {
    throw ConfigError("image and core resolutions must share one upscale factor");
  }
  if (vocab < 2 || vocab > 512) throw ConfigError("vocab must lie in [2, 512]");
}

std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"hidden", std::to_string(c.hidden)},
      {"heads", std::to_string(c.heads)},
      {"blocks", std::to_string(c.blocks)},
      {"mlp_width", std::to_string(c.mlp_width)},
      {"core_height", std::to_string(c.core_height)},
      {"core_width", std::to_string(c.core_width)},
      {"image_height", std::to_string(c.image_height)},
      {"image_width", std::to_string(c.image_width)},
      {"vocab", std::to_string(c.vocab)},
      {"positional_embeddings", b(c.positional_embeddings)},
      {"block_final_norm", b(c.block_final_norm)},
      {"per_channel_trunk", b(c.per_channel_trunk)},
      {"cond_attention", b(c.ablation.cond_attention)},
      {"cond_mlp", b(c.ablation.cond_mlp)},
      {"cond_norm", b(c.ablation.cond_norm)},
      {"cond_mode", mode_name(c.ablation.mode)},
      {"attention_targets", c.ablation.attention_targets == AttentionTargets::qkv ? "qkv" : "v_only"},
      {"norm_pool", c.ablation.pool == PoolMode::learnable ? "learnable" : "fixed_mean"},
  };
}

bool apply_model_key(ModelConfig& c, std::string_view key, std::string_view value) {
  if (key == "hidden") c.hidden = parse_size(key, value);
  else if (key == "heads") c.heads = parse_size(key, value);
  else if (key == "blocks") c.blocks = parse_size(key, value);
  else if (key == "mlp_width") c.mlp_width = parse_size(key, value);
  else if (key == "core_height") c.core_height = parse_size(key, value);
  else if (key == "core_width") c.core_width = parse_size(key, value);
  else if (key == "image_height") c.image_height = parse_size(key, value);
  else if (key == "image_width") c.image_width = parse_size(key, value);
  else if (key == "vocab") c.vocab = parse_size(key, value);
  else if (key == "positional_embeddings") c.positional_embeddings = parse_bool(key, value);
  else if (key == "block_final_norm") c.block_final_norm = parse_bool(key, value);
  else if (key == "per_channel_trunk") c.per_channel_trunk = parse_bool(key, value);
  else if (key == "cond_attention") c.ablation.cond_attention = parse_bool(key, value);
  else if (key == "cond_mlp") c.ablation.cond_mlp = parse_bool(key, value);
  else if (key == "cond_norm") c.ablation.cond_norm = parse_bool(key, value);
  else if (key == "cond_mode") {
    static const std::map<std::string_view, CondMode> modes = {
        {"scale_and_shift", CondMode::scale_and_shift},
        {"scale_only", CondMode::scale_only},
        {"shift_only", CondMode::shift_only}};
    auto it = modes.find(value);
    if (it == modes.end()) throw ConfigError("invalid cond_mode '" + std::string(value) + "'");
    c.ablation.mode = it->second;
  } else if (key == "attention_targets") {
    if (value == "qkv") c.ablation.attention_targets = AttentionTargets::qkv;
    else if (value == "v_only") c.ablation.attention_targets = AttentionTargets::v_only;
    else throw ConfigError("invalid attention_targets '" + std::string(value) + "'");
  } else if (key == "norm_pool") {
    if (value == "learnable") c.ablation.pool = PoolMode::learnable;
    else if (value == "fixed_mean") c.ablation.pool = PoolMode::fixed_mean;
    else throw ConfigError("invalid norm_pool '" + std::string(value) + "'");
  } else if (key == "ablation") {
    c.ablation = ablation_preset(value);
  } else {
    return false;
  }
  return true;
}

}  // namespace coltran
