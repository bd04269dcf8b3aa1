#include "evifuse/evaluation.hpp"

#include <cstdio>
#include <optional>
#include <ostream>

#include "evifuse/error.hpp"
#include "evifuse/parallel.hpp"

namespace evifuse {

namespace {

struct Slot {
  ExampleScores scores;
  CalibrationBins fused_bins{kCalibrationBins};
  std::vector<CalibrationBins> modality_bins;
};

SourceScores score_source(const ProbabilityMap& probs, const LabeledExample& ex, int classes,
                          const std::optional<EvaluationRegion>& region, NllMode mode,
                          CalibrationBins& bins) {
  SourceScores s;
  s.dice = mean_foreground_dice(argmax_labels(probs), ex.labels, classes);
  if (region) {
    s.brier = brier(probs, ex.labels, *region);
    s.nll = nll(probs, ex.labels, *region, mode);
    bins = calibration_bins(probs, ex.labels, *region, kCalibrationBins);
    s.ece = ece(bins);
  }
  return s;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

EvaluationReport evaluate(const Model& model, std::span<const LabeledExample> examples,
                          std::vector<std::string> modalities, NllMode mode) {
  if (examples.empty()) fail(ErrorCode::InvalidArgument, "evaluation split is empty");
  const int T = model.modalities();
  const int K = model.classes();
  if (static_cast<int>(modalities.size()) != T) {
    fail(ErrorCode::DimensionMismatch, "one modality name per model modality is required");
  }
  std::vector<Slot> slots(examples.size());
  parallel_for(examples.size(), [&](std::size_t i) {
    const auto& ex = examples[i];
    ex.validate(T, K);
    Slot& slot = slots[i];
    std::optional<EvaluationRegion> region;
    try {
      region = foreground_box(ex.labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyRegion) throw;
    }
    const auto fp = forward(model, ex.images);
    slot.scores.index = i;
    slot.scores.has_region = region.has_value();
    slot.scores.fused = score_source(fp.fused, ex, K, region, mode, slot.fused_bins);
    slot.modality_bins.assign(static_cast<std::size_t>(T), CalibrationBins(kCalibrationBins));
    for (int t = 0; t < T; ++t) {
      slot.scores.modality.push_back(score_source(fp.modality_probabilities(t), ex, K, region, mode,
                                                  slot.modality_bins[static_cast<std::size_t>(t)]));
    }
  });

  EvaluationReport report;
  report.modalities = std::move(modalities);
  report.modality_mean.assign(static_cast<std::size_t>(T), SourceScores{});
  report.modality_bins.assign(static_cast<std::size_t>(T), CalibrationBins(kCalibrationBins));
  std::size_t with_region = 0;
  auto add = [](SourceScores& into, const SourceScores& s, bool region) {
    into.dice += s.dice;
    if (!region) return;
    into.brier += s.brier;
    into.nll += s.nll;
    into.ece += s.ece;
  };
  for (auto& slot : slots) {
    const bool region = slot.scores.has_region;
    if (region) {
      ++with_region;
      accumulate_bins(report.fused_bins, slot.fused_bins);
      for (std::size_t t = 0; t < slot.modality_bins.size(); ++t) {
        accumulate_bins(report.modality_bins[t], slot.modality_bins[t]);
      }
    } else {
      report.warnings.push_back("example " + std::to_string(slot.scores.index) +
                                " has no foreground; skipped for brier, nll and ece");
    }
    add(report.fused_mean, slot.scores.fused, region);
    for (std::size_t t = 0; t < slot.scores.modality.size(); ++t) {
      add(report.modality_mean[t], slot.scores.modality[t], region);
    }
    report.examples.push_back(std::move(slot.scores));
  }
  auto finish = [&](SourceScores& s) {
    s.dice /= static_cast<double>(examples.size());
    if (with_region == 0) return;
    const double scale = 1.0 / static_cast<double>(with_region);
    s.brier *= scale;
    s.nll *= scale;
    s.ece *= scale;
  };
  finish(report.fused_mean);
  for (auto& s : report.modality_mean) finish(s);
  return report;
}

void write_metrics_csv(std::ostream& out, const EvaluationReport& report) {
  out << "example_id,dice_fused";
  for (const auto& m : report.modalities) out << ",dice_modality_" << m;
  out << ",brier,nll,ece\n";
  for (const auto& row : report.examples) {
    out << row.index << ',' << fixed(row.fused.dice);
    for (const auto& m : row.modality) out << ',' << fixed(m.dice);
    if (row.has_region) {
      out << ',' << fixed(row.fused.brier) << ',' << fixed(row.fused.nll) << ',' << fixed(row.fused.ece);
    } else {
      out << ",,,";
    }
    out << '\n';
  }
}

void write_calibration_csv(std::ostream& out, const CalibrationBins& bins) {
  out << "bin,count,accuracy,confidence\n";
  for (int b = 0; b < bins.bins(); ++b) {
    out << b << ',' << bins.counts[static_cast<std::size_t>(b)] << ',' << fixed(bins.accuracy(b)) << ','
        << fixed(bins.confidence(b)) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const EvaluationReport& report) {
  out << "source,dice,brier,nll,ece\n";
  auto row = [&out](const std::string& name, const SourceScores& s) {
    out << name << ',' << fixed(s.dice) << ',' << fixed(s.brier) << ',' << fixed(s.nll) << ','
        << fixed(s.ece) << '\n';
  };
  row("fused", report.fused_mean);
  for (std::size_t t = 0; t < report.modality_mean.size(); ++t) {
    row(report.modalities[t], report.modality_mean[t]);
  }
}

}  // namespace evifuse
