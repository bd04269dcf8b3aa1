#pragma once

// Prototype-based evidence mapping: a feature vector is compared with I
// prototypes, each prototype yields a simple mass function, and the I masses
// are merged with Dempster's rule.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evifuse/dst.hpp"

namespace evifuse {

struct EnnParameters {
  int prototypes_count = 0;  // I
  int feature_dim = 0;       // H
  int classes = 0;           // K

  std::vector<double> prototypes;   // I x H, row-major
  std::vector<double> alpha;        // I, in [0,1]
  std::vector<double> gamma;        // I, > 0
  std::vector<double> memberships;  // I x K, row-stochastic

  std::span<const double> prototype(int i) const {
    return std::span<const double>(prototypes).subspan(static_cast<std::size_t>(i * feature_dim),
                                                       static_cast<std::size_t>(feature_dim));
  }
  std::span<const double> membership_row(int i) const {
    return std::span<const double>(memberships).subspan(static_cast<std::size_t>(i * classes),
                                                        static_cast<std::size_t>(classes));
  }

  /// Throws on shape or constraint violations.
  void validate() const;

  friend bool operator==(const EnnParameters&, const EnnParameters&) = default;
};

/// Default I.
inline constexpr int kDefaultPrototypes = 10;

EnnParameters init_enn(int prototypes, int classes, int feature_dim, std::uint64_t seed);

/// Loop-trip counter used to check the per-example cost.
struct OpCount {
  std::size_t operations = 0;
};

/// s_i = alpha_i * exp(-gamma_i * ||x - p_i||^2)
std::vector<double> prototype_activation(std::span<const double> x, const EnnParameters& params);

SimpleMassFunction prototype_mass(double similarity, std::span<const double> membership_row);
SimpleMassFunction prototype_mass(double similarity, std::span<const double> membership_row,
                                  const Frame& frame);

/// Writes K singleton masses followed by the frame mass into `out` (size K+1).
/// Prototypes are merged pairwise in index order.
void enn_forward_into(std::span<const double> x, const EnnParameters& params, std::span<double> out,
                      OpCount* count = nullptr);

SimpleMassFunction enn_forward(std::span<const double> x, const EnnParameters& params);
SimpleMassFunction enn_forward(std::span<const double> x, const EnnParameters& params,
                               const Frame& frame);

struct EnnGradients {
  std::vector<double> input;        // H
  std::vector<double> prototypes;   // I x H
  std::vector<double> alpha;        // I
  std::vector<double> gamma;        // I
  std::vector<double> memberships;  // I x K, unconstrained partials
  // memberships with each row's mean removed: the component that keeps
  // rows on the probability simplex.
  std::vector<double> memberships_tangent;

  static EnnGradients zeros(const EnnParameters& params);
  void project_memberships(int classes);
};

/// Scratch buffers for the accumulate path; reuse across voxels.
struct EnnWorkspace {
  std::vector<double> similarity, expo, dist, factors, prefix, d_factor, d_cols, suffix;
};

/// Gradients of the forward map given dL/d(masses) (K singletons, then frame).
EnnGradients enn_backward(std::span<const double> x, const EnnParameters& params,
                          std::span<const double> upstream);

/// Adds this voxel's parameter gradients into `grads` (tangent left untouched)
/// and writes dL/dx into `input_grad`.
void enn_backward_accumulate(std::span<const double> x, const EnnParameters& params,
                             std::span<const double> upstream, EnnGradients& grads,
                             std::span<double> input_grad, EnnWorkspace& ws);

}  // namespace evifuse
