#pragma once

// JSON experiment config and the end-to-end runner that writes the
// artifacts directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evifuse/dataset.hpp"
#include "evifuse/evaluation.hpp"
#include "evifuse/model.hpp"
#include "evifuse/training.hpp"

namespace evifuse {

struct SplitSizes {
  std::size_t train = 64;
  std::size_t validation = 16;
  std::size_t test = 16;
  std::size_t total() const noexcept { return train + validation + test; }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<std::string> dataset;  // container path; synthetic data otherwise
  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;      // otherwise derived from `seed`
  SplitSizes split;
  ModelConfig model;
  TrainingConfig training;             // training.seed is derived from `seed`
  NllMode nll = NllMode::TrueClass;

  /// Fills the derived seeds.
  void resolve_seeds();
  std::vector<std::string> problems() const;
};

/// Parses and validates; every problem is reported in one Config error.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved config, defaults included.
nlohmann::json to_json(const ExperimentConfig& config);

struct RunOptions {
  bool eval_only = false;
  std::optional<std::filesystem::path> checkpoint;  // required for eval_only; warm start otherwise
};

struct ExperimentResult {
  EvaluationReport report;
  std::optional<TrainingResult> training;
  bool diverged = false;
  std::string divergence;
};

/// Loads or generates data, trains (unless eval_only), evaluates on the test
/// split and writes config.json, training_log.csv, checkpoint.bin,
/// metrics.csv, calibration.csv, summary.csv, beta.csv and beta_table.csv.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const RunOptions& options = {});

/// Wide table of learned reliabilities, one row per modality.
void report_beta(const std::filesystem::path& checkpoint, std::ostream& out);

}  // namespace evifuse
