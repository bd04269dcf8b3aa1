#pragma once

// Self-contained acceptance checks, each comparing the library against an
// oracle or a hand-computed value.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "evifuse/dst.hpp"

namespace evifuse::verify {

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

/// `PASS criterion N (name): detail`
std::string format(const CheckResult& r);

// Tolerances.
inline constexpr double kExactTolerance = 1e-12;
inline constexpr double kOracleTolerance = 1e-9;
inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kGradientStep = 1e-5;

CheckResult check_example_one();
CheckResult check_contour_shortcut(std::uint64_t seed, int trials_per_k = 1000);
CheckResult check_contextual_discount(std::uint64_t seed, int trials_per_k = 1000);
CheckResult check_gradients(std::uint64_t seed);
CheckResult check_metric_units();
CheckResult check_algebraic_laws(std::uint64_t seed, int trials = 10000);
/// The perfectly calibrated construction half of the calibration criterion.
CheckResult check_ece_zero();

/// Everything above, in criterion order.
std::vector<CheckResult> run_fast_checks(std::uint64_t seed);

// Random inputs shared with the unit tests.
struct Sampler {
  explicit Sampler(std::uint64_t seed);
  double uniform();
  int integer(int lo, int hi);  // inclusive
  /// Dirichlet(1) weights over n entries; occasionally zeroes some entries.
  std::vector<double> simplex(int n, bool allow_zeros = true);
  SimpleMassFunction simple_mass(const Frame& frame);
  /// Random focal sets, always including the frame so combinations stay defined.
  MassFunction general_mass(const Frame& frame, int max_focal = 5);
  /// Mass whose focal sets are nonempty subsets of `a`.
  MassFunction mass_within(const Frame& frame, Subset a, int max_focal = 4);
  std::vector<double> betas(int K);

 private:
  std::mt19937_64 rng_;
};

}  // namespace evifuse::verify
