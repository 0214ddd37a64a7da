#include "coltran/run_config.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "coltran/errors.h"

namespace coltran {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::pair<std::string, std::string> split_assignment(std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(line) + "'");
  auto key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(line) + "'");
  return {key, trim(line.substr(eq + 1))};
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("invalid integer for " + std::string(key) + ": '" + std::string(value) + "'");
  }
  return out;
}

const Stage kStages[] = {Stage::core, Stage::color_up, Stage::spatial_up};

/// Splits "core.model.hidden" into stage, section and key. Returns false
/// for keys without a stage prefix.
bool split_stage_key(std::string_view key, Stage& stage, std::string_view& rest) {
  for (Stage s : kStages) {
    const auto name = stage_name(s);
    if (key.size() > name.size() && key.substr(0, name.size()) == name && key[name.size()] == '.') {
      stage = s;
      rest = key.substr(name.size() + 1);
      return true;
    }
  }
  return false;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      cfg.entries_.push_back(split_assignment(t));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& o : overrides) cfg.entries_.push_back(split_assignment(o));

  // Every key must be recognized somewhere.
  for (const auto& [key, value] : cfg.entries_) {
    std::string_view k = key;
    Stage stage;
    std::string_view rest = k;
    if (split_stage_key(k, stage, rest)) k = rest;
    ModelConfig m;
    TrainConfig tr;
    bool known = false;
    if (k.starts_with("model.")) known = apply_model_key(m, k.substr(6), value);
    else if (k.starts_with("train.")) known = apply_train_key(tr, k.substr(6), value);
    else if (rest.data() == key.data() && k.starts_with("data.")) {
      const auto dk = k.substr(5);
      known = dk == "source" || dk == "holdout_count" || dk == "shuffle_seed";
      if (dk == "holdout_count" || dk == "shuffle_seed") parse_uint(key, value);
    }
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  for (Stage s : kStages) {
    cfg.model(s).validate();
    cfg.train(s).validate();
  }
  const auto spec = cfg.data();
  if (!spec.source.empty() && !std::filesystem::exists(spec.source)) {
    throw ConfigError("data.source does not exist: " + spec.source.string());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ModelConfig RunConfig::model(Stage stage) const {
  ModelConfig m;
  for (const auto& [key, value] : entries_) {
    if (key.starts_with("model.")) apply_model_key(m, std::string_view(key).substr(6), value);
  }
  for (const auto& [key, value] : entries_) {
    Stage s;
    std::string_view rest;
    if (split_stage_key(key, s, rest) && s == stage && rest.starts_with("model.")) {
      apply_model_key(m, rest.substr(6), value);
    }
  }
  return m;
}

TrainConfig RunConfig::train(Stage stage) const {
  TrainConfig t;
  for (const auto& [key, value] : entries_) {
    if (key.starts_with("train.")) apply_train_key(t, std::string_view(key).substr(6), value);
  }
  for (const auto& [key, value] : entries_) {
    Stage s;
    std::string_view rest;
    if (split_stage_key(key, s, rest) && s == stage && rest.starts_with("train.")) {
      apply_train_key(t, rest.substr(6), value);
    }
  }
  return t;
}

DatasetSpec RunConfig::data() const {
  DatasetSpec spec;
  const auto m = model(Stage::core);
  spec.core_height = m.core_height;
  spec.core_width = m.core_width;
  spec.image_height = m.image_height;
  spec.image_width = m.image_width;
  for (const auto& [key, value] : entries_) {
    if (key == "data.source") spec.source = value;
    else if (key == "data.holdout_count") spec.holdout_count = parse_uint(key, value);
    else if (key == "data.shuffle_seed") spec.shuffle_seed = parse_uint(key, value);
  }
  return spec;
}

}  // namespace coltran
