#include <cstdlib>
#include <string>

#include "evifuse/error.hpp"
#include "evifuse/simd/kernels.hpp"

namespace evifuse::simd {

namespace detail {
#ifndef EVIFUSE_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif
}  // namespace detail

std::string_view to_string(Level level) {
  switch (level) {
    case Level::Scalar: return "scalar";
    case Level::Avx2: return "avx2";
  }
  return "unknown";
}

bool supported(Level level) {
  switch (level) {
    case Level::Scalar: return true;
    case Level::Avx2:
#if defined(__x86_64__) || defined(__i386__)
      if (detail::avx2_table() == nullptr) return false;
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& kernels(Level level) {
  if (!supported(level)) {
    fail(ErrorCode::InvalidArgument,
         "SIMD level '" + std::string(to_string(level)) + "' is not available on this CPU");
  }
  return level == Level::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

namespace {

const KernelTable& select() {
  const char* env = std::getenv("EVIFUSE_SIMD");
  const std::string request = env ? env : "auto";
  if (request == "scalar") return kernels(Level::Scalar);
  if (request == "avx2") return kernels(Level::Avx2);
  if (request != "auto" && !request.empty()) {
    fail(ErrorCode::Config, "EVIFUSE_SIMD must be one of scalar, avx2, auto; got '" + request + "'");
  }
  return supported(Level::Avx2) ? kernels(Level::Avx2) : kernels(Level::Scalar);
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& table = select();
  return table;
}

Level active_level() { return kernels().level; }

}  // namespace evifuse::simd
