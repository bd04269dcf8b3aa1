#include "evifuse/simd/kernels.hpp"

namespace evifuse::simd::detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void discount_multiply_scalar(const double* pl, const double* beta, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] *= 1.0 - beta[i] + beta[i] * pl[i];
}

constexpr KernelTable kScalar{
    Level::Scalar, &dot_scalar, &squared_distance_scalar, &axpy_scalar, &discount_multiply_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace evifuse::simd::detail
