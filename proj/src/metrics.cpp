#include "evifuse/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "evifuse/error.hpp"

namespace evifuse {

namespace {

void require_same_grid(int w1, int h1, int w2, int h2) {
  if (w1 != w2 || h1 != h2) {
    fail(ErrorCode::DimensionMismatch, "grids have different dimensions");
  }
}

void require_region(const ProbabilityMap& probs, const LabelGrid& truth,
                    const EvaluationRegion& region) {
  require_same_grid(probs.width, probs.height, truth.width, truth.height);
  if (probs.values.size() != truth.voxels() * static_cast<std::size_t>(probs.classes)) {
    fail(ErrorCode::DimensionMismatch, "probability map storage does not match its dimensions");
  }
  if (region.voxels() == 0) fail(ErrorCode::EmptyRegion, "evaluation region is empty");
  if (region.x_min < 0 || region.y_min < 0 || region.x_max >= truth.width ||
      region.y_max >= truth.height) {
    fail(ErrorCode::InvalidArgument, "evaluation region extends past the grid");
  }
}

template <typename Fn>
void for_each_voxel(const EvaluationRegion& region, int width, Fn&& fn) {
  for (int y = region.y_min; y <= region.y_max; ++y) {
    for (int x = region.x_min; x <= region.x_max; ++x) fn(static_cast<std::size_t>(y * width + x));
  }
}

}  // namespace

LabelGrid::LabelGrid(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) fail(ErrorCode::InvalidArgument, "label grid sizes must be positive");
  labels.assign(voxels(), 0);
}

EvaluationRegion foreground_box(const LabelGrid& labels, std::uint16_t background) {
  EvaluationRegion box{labels.width, labels.height, -1, -1};
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      if (labels.at(y, x) == background) continue;
      box.x_min = std::min(box.x_min, x);
      box.y_min = std::min(box.y_min, y);
      box.x_max = std::max(box.x_max, x);
      box.y_max = std::max(box.y_max, y);
    }
  }
  if (box.x_max < 0) fail(ErrorCode::EmptyRegion, "example has no foreground voxels");
  return box;
}

double dice_from_counts(const ConfusionCounts& c) {
  const std::size_t denom = c.fp + 2 * c.tp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

ConfusionCounts confusion(const LabelGrid& predicted, const LabelGrid& truth,
                          std::span<const std::uint16_t> classes) {
  require_same_grid(predicted.width, predicted.height, truth.width, truth.height);
  auto selected = [&](std::uint16_t v) {
    return std::find(classes.begin(), classes.end(), v) != classes.end();
  };
  ConfusionCounts c;
  for (std::size_t n = 0; n < truth.voxels(); ++n) {
    const bool p = selected(predicted.labels[n]);
    const bool t = selected(truth.labels[n]);
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
  }
  return c;
}

double dice_score(const LabelGrid& predicted, const LabelGrid& truth,
                  std::span<const std::uint16_t> merged) {
  return dice_from_counts(confusion(predicted, truth, merged));
}

double dice_score(const LabelGrid& predicted, const LabelGrid& truth, std::uint16_t cls) {
  return dice_score(predicted, truth, std::span<const std::uint16_t>(&cls, 1));
}

double mean_foreground_dice(const LabelGrid& predicted, const LabelGrid& truth, int classes) {
  if (classes < 2) fail(ErrorCode::InvalidArgument, "need at least one foreground class");
  double sum = 0.0;
  for (int k = 1; k < classes; ++k) {
    sum += dice_score(predicted, truth, static_cast<std::uint16_t>(k));
  }
  return sum / static_cast<double>(classes - 1);
}

LabelGrid argmax_labels(const ProbabilityMap& probs) {
  LabelGrid out(probs.width, probs.height);
  for (std::size_t n = 0; n < out.voxels(); ++n) {
    const auto p = probs.voxel(n);
    out.labels[n] = static_cast<std::uint16_t>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return out;
}

double brier(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region) {
  require_region(probs, truth, region);
  double sum = 0.0;
  for_each_voxel(region, truth.width, [&](std::size_t n) {
    const auto p = probs.voxel(n);
    for (int k = 0; k < probs.classes; ++k) {
      const double g = truth.labels[n] == k ? 1.0 : 0.0;
      const double d = p[static_cast<std::size_t>(k)] - g;
      sum += d * d;
    }
  });
  return sum / static_cast<double>(region.voxels());
}

double nll(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region,
           NllMode mode) {
  require_region(probs, truth, region);
  double sum = 0.0;
  for_each_voxel(region, truth.width, [&](std::size_t n) {
    const auto p = probs.voxel(n);
    const std::size_t label = truth.labels[n];
    if (mode == NllMode::TrueClass) {
      sum -= std::log(std::max(p[label], kProbabilityFloor));
      return;
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      sum -= k == label ? std::log(std::max(p[k], kProbabilityFloor))
                        : std::log(std::max(1.0 - p[k], kProbabilityFloor));
    }
  });
  return sum;
}

CalibrationBins::CalibrationBins(int bins) {
  if (bins < 1) fail(ErrorCode::InvalidArgument, "need at least one calibration bin");
  counts.assign(static_cast<std::size_t>(bins), 0);
  correct.assign(static_cast<std::size_t>(bins), 0);
  confidence_sum.assign(static_cast<std::size_t>(bins), 0.0);
}

double CalibrationBins::accuracy(int b) const {
  const auto i = static_cast<std::size_t>(b);
  return counts[i] == 0 ? 0.0 : static_cast<double>(correct[i]) / static_cast<double>(counts[i]);
}

double CalibrationBins::confidence(int b) const {
  const auto i = static_cast<std::size_t>(b);
  return counts[i] == 0 ? 0.0 : confidence_sum[i] / static_cast<double>(counts[i]);
}

int calibration_bin(double confidence, int bins) {
  const int b = static_cast<int>(std::floor(confidence * bins));
  return std::clamp(b, 0, bins - 1);
}

CalibrationBins calibration_bins(const ProbabilityMap& probs, const LabelGrid& truth,
                                 const EvaluationRegion& region, int bins) {
  require_region(probs, truth, region);
  CalibrationBins out(bins);
  for_each_voxel(region, truth.width, [&](std::size_t n) {
    const auto p = probs.voxel(n);
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto b = static_cast<std::size_t>(calibration_bin(p[best], bins));
    ++out.counts[b];
    out.confidence_sum[b] += p[best];
    if (best == truth.labels[n]) ++out.correct[b];
    ++out.total;
  });
  return out;
}

void accumulate_bins(CalibrationBins& into, const CalibrationBins& from) {
  if (into.bins() != from.bins()) fail(ErrorCode::DimensionMismatch, "bin counts differ");
  for (std::size_t b = 0; b < into.counts.size(); ++b) {
    into.counts[b] += from.counts[b];
    into.correct[b] += from.correct[b];
    into.confidence_sum[b] += from.confidence_sum[b];
  }
  into.total += from.total;
}

double ece(const CalibrationBins& bins) {
  if (bins.total == 0) fail(ErrorCode::EmptyRegion, "no voxels were binned");
  double sum = 0.0;
  for (int b = 0; b < bins.bins(); ++b) {
    const auto count = bins.counts[static_cast<std::size_t>(b)];
    if (count == 0) continue;
    sum += static_cast<double>(count) / static_cast<double>(bins.total) *
           std::abs(bins.accuracy(b) - bins.confidence(b));
  }
  return sum;
}

double ece(const ProbabilityMap& probs, const LabelGrid& truth, const EvaluationRegion& region,
           int bins) {
  return ece(calibration_bins(probs, truth, region, bins));
}

}  // namespace evifuse
