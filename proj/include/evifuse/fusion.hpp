#pragma once

// Multimodal evidence fusion: each modality's contour function is
// contextually discounted with its own per-class reliabilities, the
// discounted contours are multiplied across modalities, and the product is
// normalized into a probability distribution.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evifuse/dst.hpp"

namespace evifuse {

/// Logistic squashing used for reliability coefficients.
double squash(double raw);
double squash_inverse(double beta);

class ReliabilityMatrix {
 public:
  /// `raw` is T x K row-major.
  ReliabilityMatrix(Frame frame, std::vector<std::string> modalities, std::vector<double> raw);

  const Frame& frame() const noexcept { return frame_; }
  const std::vector<std::string>& modalities() const noexcept { return modalities_; }
  int modality_count() const noexcept { return static_cast<int>(modalities_.size()); }
  int classes() const noexcept { return frame_.size(); }

  std::span<const double> raw() const noexcept { return raw_; }
  void set_raw(std::span<const double> raw);

  /// squash(raw), T x K row-major.
  std::span<const double> beta() const noexcept { return beta_; }
  double beta(int t, int k) const {
    return beta_[static_cast<std::size_t>(t * classes() + k)];
  }
  ReliabilityVector row(int t) const;

 private:
  Frame frame_;
  std::vector<std::string> modalities_;
  std::vector<double> raw_;
  std::vector<double> beta_;
};

ReliabilityMatrix init_reliability(int modalities, int classes);
ReliabilityMatrix init_reliability(Frame frame, std::vector<std::string> modalities);

struct FusedPrediction {
  std::vector<double> probabilities;         // K
  std::vector<double> discounted_contours;   // T x K
};

ContourFunction discount_modality(const ContourFunction& pl, const ReliabilityVector& beta);

FusedPrediction fuse(std::span<const ContourFunction> contours, const ReliabilityMatrix& betas);

/// Per-voxel kernel. `contours` and `discounted` are T x K, `beta` is T x K.
/// Returns the normalizing sum.
double fuse_voxel(std::span<const double> contours, std::span<const double> beta, int modalities,
                  int classes, std::span<double> probabilities, std::span<double> discounted);

/// Batched fusion over N voxels. `contours[t]` is N x K; output is N x K.
void fuse_batch(std::span<const std::span<const double>> contours, const ReliabilityMatrix& betas,
                std::span<double> probabilities);

struct FuseGradients {
  std::vector<double> contours;  // T x K
  std::vector<double> beta;      // T x K, with respect to the squashed coefficients
  std::vector<double> raw;       // T x K, with respect to the unconstrained parameters
};

FuseGradients fuse_backward(std::span<const ContourFunction> contours,
                            const ReliabilityMatrix& betas, std::span<const double> upstream);

/// Voxel-level backward. Adds into `d_beta` (T x K, squashed coordinates) and
/// writes dL/dpl into `d_contours` (T x K).
void fuse_voxel_backward(std::span<const double> contours, std::span<const double> beta,
                         int modalities, int classes, std::span<const double> upstream,
                         std::span<double> d_contours, std::span<double> d_beta,
                         std::vector<double>& scratch);

/// Chain rule from squashed to raw coordinates.
std::vector<double> beta_to_raw_gradient(const ReliabilityMatrix& betas,
                                         std::span<const double> d_beta);

/// Conflict of the full Dempster combination of the contextually discounted
/// per-modality masses. Diagnostic only; needs K <= 16.
double fusion_conflict(std::span<const SimpleMassFunction> masses, const ReliabilityMatrix& betas);

/// `modality,class,beta` rows, coefficients rounded to three decimals.
void write_beta_csv(std::ostream& out, const ReliabilityMatrix& betas);
/// One row per modality: the modality name then K coefficients.
void write_beta_table(std::ostream& out, const ReliabilityMatrix& betas);

}  // namespace evifuse
