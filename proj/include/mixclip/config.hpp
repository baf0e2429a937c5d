#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixclip/data.hpp"
#include "mixclip/train.hpp"

namespace mixclip {

/// Settings for the paper-vs-actual loss comparison.
struct CompareConfig {
  std::size_t batches = 8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 11;
};

/// Every tunable of a run, addressed by dotted keys such as `loss.tau`.
/// Precedence: --set overrides > config file > defaults.
struct RunConfig {
  SynthConfig data;
  TrainConfig train;
  CompareConfig compare;

  /// Applies one `key`/`value` pair; unknown keys and malformed values throw.
  void set(const std::string& key, const std::string& value);

  /// Applies `key=value`.
  void apply_override(const std::string& assignment);

  /// Effective values, one `key = value` line per key in canonical order.
  std::string render() const;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// All recognised keys with their defaults.
const std::vector<ConfigKey>& config_keys();

/// Flat `key = value` document; blank lines and lines starting with '#' are
/// ignored. Errors carry the 1-based line number.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace mixclip
