#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "szlab/attack.hpp"
#include "szlab/dataset.hpp"
#include "szlab/evaluate.hpp"
#include "szlab/model.hpp"
#include "szlab/train.hpp"

namespace szlab {

// ---------------------------------------------------------------- flat TOML subset

/// One value of the flat config dialect: bool, integer, float, string, or a
/// single-line array of those.
struct ConfigValue {
  using Array = std::vector<ConfigValue>;
  std::variant<bool, std::int64_t, double, std::string, Array> value;
  int line = 0;

  bool as_bool(const std::string& key) const;
  std::int64_t as_int(const std::string& key) const;
  double as_double(const std::string& key) const;  // integers widen
  const std::string& as_string(const std::string& key) const;
  const Array& as_array(const std::string& key) const;
};

/// section -> key -> value. Keys before any [section] header live under "".
using ConfigTable = std::map<std::string, std::map<std::string, ConfigValue>>;

/// Parses `[section]` headers, `key = value` lines and `#` comments. Nested
/// tables, inline tables and multi-line values are rejected.
ConfigTable parse_flat_toml(const std::string& text);

// ---------------------------------------------------------------- experiment config

struct PretrainParams {
  PretrainConfig optimizer;
  std::size_t corpus_size = 10000;
  double null_caption_fraction = 0.1;
};

/// Shared knobs for the defense ablation.
struct DefenseParams {
  int jpeg_quality = 25;
  double t600_rho = 0.6;  // threshold_high cut of the single-threshold ablation
  double szt_rho = 0.5;   // threshold_high cut used by the full defense
  int dilation_px = 1;
  std::vector<std::string> ablation = {"nominal", "jpeg", "t600", "lm", "jpeg+t600", "jpeg+lm", "szt"};
};

struct AnalysisParams {
  int profile_points = 21;
  int profile_samples = 50;
  int ssm_replacements = 8;
  std::vector<int> ssm_timesteps = {300, 400, 500, 600, 700};
  std::vector<int> ssm_snapshots = {100, 500, 900};
  std::size_t hist_bins = 32;
  std::size_t gaussian_samples = 100000;
  double gaussian_bin_width = 0.25;
};

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> poison_concepts = {0};
  bool clean_reference = true;  // also run nominal TI on the clean images
  std::size_t threads = 0;      // 0 keeps the process default
  DatasetParams dataset;
  ModelConfig model;
  PretrainParams pretrain;
  PoisonSpec poison;
  std::string poison_target = "checkerboard";  // encoder attack only: "checkerboard" or a .tnsr/.pgm path
  TrainConfig ti;
  DefenseParams defense;
  EvalConfig eval;
  AnalysisParams analysis;

  ExperimentConfig();
  void validate() const;
  std::uint64_t require_seed() const;
  /// Canonical text form; parsing it gives back an equal config.
  std::string to_toml() const;
};

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Training config of one named ablation arm: nominal, jpeg, t600, lm, im, lim,
/// zm, jpeg+t600, jpeg+lm, t600+lm, szt.
TrainConfig defense_variant(const ExperimentConfig& cfg, const std::string& name);
bool is_defense_variant(const std::string& name);

}  // namespace szlab
