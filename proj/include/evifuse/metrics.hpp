#pragma once

// Segmentation quality and calibration criteria. Calibration metrics are
// evaluated inside a per-example bounding box around the foreground.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace evifuse {

struct LabelGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> labels;  // row-major

  LabelGrid() = default;
  LabelGrid(int width, int height);

  std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  std::uint16_t at(int y, int x) const { return labels[static_cast<std::size_t>(y * width + x)]; }
  std::uint16_t& at(int y, int x) { return labels[static_cast<std::size_t>(y * width + x)]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

/// Per-voxel class distributions, voxel-major N x K.
struct ProbabilityMap {
  int width = 0;
  int height = 0;
  int classes = 0;
  std::vector<double> values;

  std::span<const double> voxel(std::size_t n) const {
    return std::span<const double>(values).subspan(n * static_cast<std::size_t>(classes),
                                                   static_cast<std::size_t>(classes));
  }
};

/// Inclusive voxel-coordinate box.
struct EvaluationRegion {
  int x_min = 0;
  int y_min = 0;
  int x_max = -1;
  int y_max = -1;

  bool contains(int x, int y) const noexcept {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  std::size_t voxels() const noexcept {
    if (x_max < x_min || y_max < y_min) return 0;
    return static_cast<std::size_t>(x_max - x_min + 1) * static_cast<std::size_t>(y_max - y_min + 1);
  }
  static EvaluationRegion whole(int width, int height) { return {0, 0, width - 1, height - 1}; }

  friend bool operator==(const EvaluationRegion&, const EvaluationRegion&) = default;
};

/// Tightest box around every non-background voxel. Throws EmptyRegion for an
/// all-background grid.
EvaluationRegion foreground_box(const LabelGrid& labels, std::uint16_t background = 0);

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// 2TP / (FP + 2TP + FN); 1 when all three counts are zero.
double dice_from_counts(const ConfusionCounts& counts);

ConfusionCounts confusion(const LabelGrid& predicted, const LabelGrid& truth,
                          std::span<const std::uint16_t> classes);

/// Dice of one class, or of the union of several classes treated as one region.
double dice_score(const LabelGrid& predicted, const LabelGrid& truth, std::uint16_t cls);
double dice_score(const LabelGrid& predicted, const LabelGrid& truth,
                  std::span<const std::uint16_t> merged);

/// Unweighted mean of the per-class Dice over classes 1..K-1.
double mean_foreground_dice(const LabelGrid& predicted, const LabelGrid& truth, int classes);

/// Most probable class per voxel; ties go to the lower index.
LabelGrid argmax_labels(const ProbabilityMap& probs);

/// Mean over region voxels of sum_k (p_k - G_k)^2.
double brier(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region);

enum class NllMode { TrueClass, OneVsRest };

inline constexpr double kProbabilityFloor = 1e-12;

/// Sum over region voxels of -log p(true class), probabilities floored at
/// 1e-12. OneVsRest sums the binary log-loss over every class instead.
double nll(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region,
           NllMode mode = NllMode::TrueClass);

inline constexpr int kDefaultCalibrationBins = 10;

struct CalibrationBins {
  std::vector<std::size_t> counts;
  std::vector<std::size_t> correct;
  std::vector<double> confidence_sum;
  std::size_t total = 0;

  explicit CalibrationBins(int bins = kDefaultCalibrationBins);

  int bins() const noexcept { return static_cast<int>(counts.size()); }
  /// Both are 0 for an empty bin.
  double accuracy(int b) const;
  double confidence(int b) const;
};

/// Equal-width confidence bins [b/B, (b+1)/B), last bin closed.
int calibration_bin(double confidence, int bins);

CalibrationBins calibration_bins(const ProbabilityMap& probs, const LabelGrid& truth,
                                 const EvaluationRegion& region,
                                 int bins = kDefaultCalibrationBins);

/// Accumulates per-bin sums so several examples can share one diagram.
void accumulate_bins(CalibrationBins& into, const CalibrationBins& from);

double ece(const CalibrationBins& bins);
double ece(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region,
           int bins = kDefaultCalibrationBins);

}  // namespace evifuse
