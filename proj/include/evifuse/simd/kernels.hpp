#pragma once

// Data-parallel inner loops used by the extractor, the prototype layer and
// batched fusion. Every kernel has a scalar reference implementation; wider
// variants are picked once at startup from the CPU features, and the
// EVIFUSE_SIMD environment variable (scalar|avx2|auto) can force a level.

#include <cstddef>
#include <span>
#include <string_view>

namespace evifuse::simd {

enum class Level { Scalar, Avx2 };

std::string_view to_string(Level level);

struct KernelTable {
  Level level;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // acc[i] *= 1 - beta[i] + beta[i] * pl[i]
  void (*discount_multiply)(const double* pl, const double* beta, double* acc, std::size_t n);
};

bool supported(Level level);

/// Table for a specific level; throws if the CPU lacks the instructions.
const KernelTable& kernels(Level level);

/// Table selected for this process.
const KernelTable& kernels();

Level active_level();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return kernels().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return kernels().squared_distance(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace evifuse::simd
