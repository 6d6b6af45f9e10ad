#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "szlab/config.hpp"

namespace szlab {

enum class Stage { data, pretrain, poison, ti, eval, analysis };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);
const std::vector<Stage>& all_stages();

/// A pipeline stage threw; what() reads "stage <name>: <cause>".
class StageFailure : public std::runtime_error {
 public:
  StageFailure(Stage stage, const std::string& cause);
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// Holds `<dir>/.szlab.lock` for its lifetime. A second holder fails
/// immediately instead of waiting.
class ReportLock {
 public:
  explicit ReportLock(const std::filesystem::path& dir);
  ~ReportLock();
  ReportLock(const ReportLock&) = delete;
  ReportLock& operator=(const ReportLock&) = delete;

 private:
  std::filesystem::path path_;
};

inline constexpr const char* kLockFile = ".szlab.lock";
inline constexpr const char* kManifestFile = "manifest.json";

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Writes manifest.json: the config hash plus the SHA-256 of every other file
/// under `dir` keyed by its relative path. Contains no timestamps.
void write_manifest(const std::filesystem::path& dir);

/// Arm names in TI/eval order: "clean" first when clean_reference is set, then the ablation.
std::vector<std::string> ti_arms(const ExperimentConfig& cfg);

/// Analysis artifacts, each behind its own CLI subcommand.
enum class Analysis { ssm, loss_profile, grad_profile, hist, rapsd, gaussian_check, region_loss };
std::string to_string(Analysis a);
Analysis analysis_from_string(const std::string& name);
const std::vector<Analysis>& all_analyses();

/// Individual stages. Each reads its inputs from `out` (written by earlier
/// stages) and writes under its own subdirectory.
void stage_data(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_poison(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_ti(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_analysis(const ExperimentConfig& cfg, const std::filesystem::path& out, Analysis which);
/// Runs `which` (all analyses when empty).
void stage_analysis(const ExperimentConfig& cfg, const std::filesystem::path& out,
                    const std::vector<Analysis>& which = {});

/// Runs `stages` (all when empty) in pipeline order under the report lock,
/// then rewrites the manifest. A throwing stage becomes StageFailure and
/// whatever it already wrote stays on disk. `analyses` narrows the analysis stage.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                    const std::vector<Stage>& stages = {}, const std::vector<Analysis>& analyses = {});

/// Loads the config (seed required) and runs every stage.
std::filesystem::path run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out);

}  // namespace szlab
