#pragma once

// Flat key=value run configuration.
//
// One table of keys drives file parsing, command-line flags and the
// serialized form written next to every output. Resolution order: the named
// preset, then the config file, then explicit overrides (flags).

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hperl/dataset.hpp"
#include "hperl/model.hpp"

namespace hperl {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  std::string preset = "fusion";
  ModelConfig model;
  DatasetConfig data;
  std::string dataset_dir = "dataset";
  std::string out_dir = "run";
  std::string checkpoint;  // eval input
  std::string resume;      // train: checkpoint to continue from
  std::string split = "eval";
  std::string predictor = "model";  // model | oracle
  std::string ablate_modes = "fusion,rgb";
  std::string ablate_fusion = "concat,mean";
  std::string ablate_roi = "align,pool";
  std::string ablate_flip = "on,off";

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(const std::string& name);

using KeyValues = std::map<std::string, std::string>;

// Lines of "key = value"; blank lines and '#' comments are ignored. Throws
// ConfigError on malformed lines and duplicate keys.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);

std::vector<std::string> preset_names();
RunConfig preset_config(const std::string& name);

// Applies values in table order; unknown keys and bad values throw ConfigError.
// The "preset" key is ignored here (see resolve_config).
void apply_key_values(RunConfig& cfg, const KeyValues& kv);

// Preset (from overrides, else file, else "fusion"), then file, then overrides.
RunConfig resolve_config(const KeyValues& file, const KeyValues& overrides);

// Every key, one per line, in table order. resolve_config({}, parse(text))
// reproduces the configuration.
std::string config_text(const RunConfig& cfg);
RunConfig config_from_text(const std::string& text);

std::string to_string(InputMode m);
std::string to_string(FusionOp f);
std::string to_string(RoiOp r);
std::string to_string(nn::Optimizer::Kind k);

}  // namespace hperl
