#pragma once

// Test-set evaluation of a trained model: per-example scores for the fused
// output and for each modality alone, averaged without weighting, plus the
// pooled calibration diagram.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evifuse/metrics.hpp"
#include "evifuse/model.hpp"

namespace evifuse {

inline constexpr int kCalibrationBins = 10;

struct SourceScores {
  double dice = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  double ece = 0.0;
};

struct ExampleScores {
  std::size_t index = 0;
  bool has_region = true;  // false for all-background examples
  SourceScores fused;
  std::vector<SourceScores> modality;
};

struct EvaluationReport {
  std::vector<std::string> modalities;
  std::vector<ExampleScores> examples;
  SourceScores fused_mean;
  std::vector<SourceScores> modality_mean;
  CalibrationBins fused_bins{kCalibrationBins};
  std::vector<CalibrationBins> modality_bins;
  std::vector<std::string> warnings;
};

/// Dice over the whole grid; Brier, NLL and ECE inside each example's
/// foreground box. Examples without foreground only contribute Dice.
EvaluationReport evaluate(const Model& model, std::span<const LabeledExample> examples,
                          std::vector<std::string> modalities, NllMode mode = NllMode::TrueClass);

/// `example_id,dice_fused,dice_modality_<name>...,brier,nll,ece`
void write_metrics_csv(std::ostream& out, const EvaluationReport& report);
/// `bin,count,accuracy,confidence` for the pooled fused output.
void write_calibration_csv(std::ostream& out, const CalibrationBins& bins);
/// `source,dice,brier,nll,ece`, one row for fused and one per modality.
void write_summary_csv(std::ostream& out, const EvaluationReport& report);

}  // namespace evifuse
