#pragma once

// Adam, the softmax pretraining head, and the three-stage protocol:
// extractor pretraining, evidence/fusion training with frozen extractors,
// then joint fine-tuning, each later stage early-stopped on validation
// fused Dice with the best model retained.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evifuse/model.hpp"

namespace evifuse {

struct TrainingConfig {
  double learning_rate = 0.01;
  int batch_size = 4;
  int patience = 10;
  int pretrain_epochs = 50;
  int fusion_epochs = 100;    // stage 2 cap
  int finetune_epochs = 20;   // stage 3 cap
  bool pretrain = true;
  bool train_fusion = true;
  bool finetune = true;
  std::uint64_t seed = 0;

  /// Every violated constraint, empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
};

struct OptimizerState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t parameters)
      : first(parameters, 0.0), second(parameters, 0.0) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Bias-corrected Adam update. Entries with mask[i] == 0 are left untouched,
/// moments included. Throws NonFinite naming the first bad gradient entry.
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               double learning_rate, std::span<const std::uint8_t> mask = {});

// ---------------------------------------------------------------------------
// Stage-1 head: per-voxel affine map from features to K logits.

struct SoftmaxHead {
  int features = 0;
  int classes = 0;
  std::vector<double> weights;  // classes x features
  std::vector<double> bias;     // classes
};

SoftmaxHead init_head(int features, int classes, std::uint64_t seed);

/// Per-voxel class probabilities of extractor + head.
ProbabilityMap head_probabilities(const FeatureExtractor& extractor, const SoftmaxHead& head,
                                  const ModalityImage& image);

/// Mean per-voxel cross-entropy; adds gradients when the spans are non-empty.
double head_loss_and_gradient(const FeatureExtractor& extractor, const SoftmaxHead& head,
                              const ModalityImage& image, const LabelGrid& labels,
                              std::span<double> extractor_grad, std::span<double> head_grad);

// ---------------------------------------------------------------------------

struct ValidationScores {
  double loss = 0.0;        // mean total loss
  double dice_fused = 0.0;  // mean over examples of the mean foreground Dice
  std::vector<double> dice_modality;
};

ValidationScores validate_model(const Model& model, std::span<const LabeledExample> examples);

struct LogRow {
  int epoch = 0;
  int stage = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice_fused = 0.0;
  std::vector<double> val_dice_modality;
  std::optional<double> best_val_dice;  // empty before the first selectable epoch
};

void write_training_log(std::ostream& out, std::span<const LogRow> rows,
                        std::span<const std::string> modalities);

struct BestRecord {
  int epoch = 0;
  int stage = 0;
  double val_dice_fused = 0.0;
};

struct TrainingResult {
  Model model;  // best validation model
  std::vector<LogRow> log;
  BestRecord best;
  std::optional<OptimizerState> optimizer;  // state at the end of the last stage run
  bool diverged = false;
  std::string divergence;
};

TrainingResult train(const Model& initial, std::span<const LabeledExample> training,
                     std::span<const LabeledExample> validation, const TrainingConfig& config);

}  // namespace evifuse
