#pragma once

// Flat key=value run configuration. Keys carry a section prefix:
//   model.<key>, train.<key>           shared by every stage
//   <stage>.model.<key>, <stage>.train.<key>   stage overrides (core, color_up, spatial_up)
//   data.source, data.holdout_count, data.shuffle_seed
// Lines starting with '#' and blank lines are ignored. Later assignments
// win, and command-line overrides are applied after the file.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coltran/config.h"
#include "coltran/data.h"
#include "coltran/training.h"

namespace coltran {

class RunConfig {
 public:
  /// Throws ConfigError on malformed lines, unknown keys, bad values or a
  /// data source that does not exist.
  static RunConfig parse(std::string_view text, const std::vector<std::string>& overrides = {});
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  ModelConfig model(Stage stage) const;
  TrainConfig train(Stage stage) const;
  /// Dataset layout; resolutions come from the core model settings.
  DatasetSpec data() const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace coltran
