#pragma once

// The full segmentation model: per-modality feature extractors, per-modality
// evidence layers, and the reliability-weighted fusion stage, with the
// two-part Dice objective and its exact gradient.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evifuse/dst.hpp"
#include "evifuse/enn.hpp"
#include "evifuse/extractor.hpp"
#include "evifuse/fusion.hpp"
#include "evifuse/metrics.hpp"

namespace evifuse {

struct LabeledExample {
  std::vector<ModalityImage> images;  // one per modality
  LabelGrid labels;

  void validate(int modalities, int classes) const;
};

/// G_kn as a voxel-major N x K matrix.
std::vector<double> one_hot(const LabelGrid& labels, int classes);

struct ModelConfig {
  int prototypes = kDefaultPrototypes;
  int features = kDefaultFeatures;
  int hidden = kDefaultHidden;
  int radius = kDefaultRadius;
};

class Model {
 public:
  Model(Frame frame, std::vector<std::unique_ptr<FeatureExtractor>> extractors,
        std::vector<EnnParameters> enns, ReliabilityMatrix reliability);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const Frame& frame() const noexcept { return frame_; }
  int classes() const noexcept { return frame_.size(); }
  int modalities() const noexcept { return static_cast<int>(extractors_.size()); }

  const FeatureExtractor& extractor(int t) const { return *extractors_.at(static_cast<std::size_t>(t)); }
  FeatureExtractor& extractor(int t) { return *extractors_.at(static_cast<std::size_t>(t)); }
  const EnnParameters& enn(int t) const { return enns_.at(static_cast<std::size_t>(t)); }
  EnnParameters& enn(int t) { return enns_.at(static_cast<std::size_t>(t)); }
  const ReliabilityMatrix& reliability() const noexcept { return reliability_; }
  ReliabilityMatrix& reliability() noexcept { return reliability_; }

 private:
  Frame frame_;
  std::vector<std::unique_ptr<FeatureExtractor>> extractors_;
  std::vector<EnnParameters> enns_;
  ReliabilityMatrix reliability_;
};

/// Extractor seeds, prototype seeds and memberships are derived from `seed`.
Model init_model(const ModelConfig& config, Frame frame, std::vector<std::string> modalities,
                 std::span<const int> channels, std::uint64_t seed);

struct ForwardPass {
  std::vector<FeatureMap> features;            // per modality
  std::vector<std::vector<double>> masses;     // per modality, N x (K + 1)
  std::vector<std::vector<double>> contours;   // per modality, N x K
  ProbabilityMap fused;

  /// Normalized singleton plausibilities of one modality alone.
  ProbabilityMap modality_probabilities(int t) const;
};

ForwardPass forward(const Model& model, std::span<const ModalityImage> images);

/// Dice-type loss 1 - 2 sum(y G) / sum(y + G) over an N x K prediction.
/// Writes dL/dy when `grad` is non-empty.
double dice_loss(std::span<const double> prediction, const LabelGrid& truth, int classes,
                 std::span<double> grad = {});

/// Sum over modalities of the Dice loss on the singleton masses.
double loss_source(std::span<const std::vector<double>> masses, const LabelGrid& truth, int classes);
double loss_source(std::span<const std::vector<SimpleMassFunction>> masses, const LabelGrid& truth);

double loss_fused(const ProbabilityMap& probs, const LabelGrid& truth);

struct LossTerms {
  double source = 0.0;
  double fused = 0.0;
  double total() const noexcept { return source + fused; }
};

/// Gradient in the model's natural coordinates.
struct ModelGradient {
  std::vector<std::vector<double>> extractors;  // flat, per modality
  std::vector<EnnGradients> enns;
  std::vector<double> beta;      // T x K, squashed coefficients
  std::vector<double> beta_raw;  // T x K, unconstrained parameters

  static ModelGradient zeros(const Model& model);
  void add(const ModelGradient& other, double scale = 1.0);
};

struct LossSelection {
  bool source = true;
  bool fused = true;
};

/// Loss of one example; when `grad` is given, its gradient is added to it.
LossTerms loss_and_gradient(const Model& model, const LabeledExample& example,
                            ModelGradient* grad = nullptr, LossSelection terms = {});

// ---------------------------------------------------------------------------
// Unconstrained parameterization used by the optimizer. alpha goes through a
// logistic map, gamma through softplus, each membership row through a
// normalized exponential, beta through the reliability squashing.

struct ParameterBlock {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParameterLayout {
  std::vector<ParameterBlock> extractors;
  std::vector<ParameterBlock> prototypes, alpha, gamma, memberships;
  ParameterBlock beta;
  std::size_t total = 0;

  static ParameterLayout of(const Model& model);
};

double softplus(double x);
double softplus_inverse(double y);

std::vector<double> pack_parameters(const Model& model);
void unpack_parameters(std::span<const double> raw, Model& model);
/// Chain rule from natural coordinates to the packed unconstrained ones.
std::vector<double> packed_gradient(const Model& model, const ModelGradient& grad);

}  // namespace evifuse
