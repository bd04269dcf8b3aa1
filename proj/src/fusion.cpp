#include "evifuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "evifuse/error.hpp"
#include "evifuse/simd/kernels.hpp"

namespace evifuse {

namespace {

constexpr double kDenominatorFloor = 1e-300;

double normalize_or_fail(double total) {
  if (std::isnan(total)) fail(ErrorCode::NonFinite, "non-finite plausibility reached fusion");
  if (!(total > 0.0)) {
    fail(ErrorCode::ZeroDenominator, "every class is fully implausible under the fused evidence");
  }
  return total < kDenominatorFloor ? kDenominatorFloor : total;
}

}  // namespace

double squash(double raw) {
  if (raw >= 0.0) return 1.0 / (1.0 + std::exp(-raw));
  const double e = std::exp(raw);
  return e / (1.0 + e);
}

double squash_inverse(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) {
    fail(ErrorCode::InvalidArgument, "squash_inverse needs a value strictly inside (0,1)");
  }
  return std::log(beta) - std::log1p(-beta);
}

ReliabilityMatrix::ReliabilityMatrix(Frame frame, std::vector<std::string> modalities,
                                     std::vector<double> raw)
    : frame_(std::move(frame)), modalities_(std::move(modalities)) {
  if (modalities_.empty()) fail(ErrorCode::InvalidArgument, "need at least one modality");
  set_raw(raw);
}

void ReliabilityMatrix::set_raw(std::span<const double> raw) {
  if (raw.size() != modalities_.size() * static_cast<std::size_t>(frame_.size())) {
    fail(ErrorCode::DimensionMismatch, "reliability matrix must hold T x K raw parameters");
  }
  raw_.assign(raw.begin(), raw.end());
  beta_.resize(raw_.size());
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    if (!std::isfinite(raw_[i])) fail(ErrorCode::NonFinite, "non-finite reliability parameter");
    beta_[i] = squash(raw_[i]);
  }
}

ReliabilityVector ReliabilityMatrix::row(int t) const {
  const auto k = static_cast<std::size_t>(classes());
  const auto begin = beta_.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * k);
  return ReliabilityVector(frame_, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(k)));
}

ReliabilityMatrix init_reliability(Frame frame, std::vector<std::string> modalities) {
  if (modalities.empty()) fail(ErrorCode::InvalidArgument, "need at least one modality");
  // squash(0) is exactly 0.5.
  std::vector<double> raw(modalities.size() * static_cast<std::size_t>(frame.size()), 0.0);
  return ReliabilityMatrix(std::move(frame), std::move(modalities), std::move(raw));
}

ReliabilityMatrix init_reliability(int modalities, int classes) {
  if (modalities < 1 || classes < 2) {
    fail(ErrorCode::InvalidArgument, "init_reliability: need T >= 1 and K >= 2");
  }
  std::vector<std::string> names;
  for (int t = 1; t <= modalities; ++t) names.push_back("modality" + std::to_string(t));
  return init_reliability(Frame::indexed(classes), std::move(names));
}

ContourFunction discount_modality(const ContourFunction& pl, const ReliabilityVector& beta) {
  return contextual_discount_contour(pl, beta);
}

double fuse_voxel(std::span<const double> contours, std::span<const double> beta, int modalities,
                  int classes, std::span<double> probabilities, std::span<double> discounted) {
  const auto K = static_cast<std::size_t>(classes);
  for (std::size_t k = 0; k < K; ++k) probabilities[k] = 1.0;
  for (std::size_t t = 0; t < static_cast<std::size_t>(modalities); ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t idx = t * K + k;
      const double d = 1.0 - beta[idx] + beta[idx] * contours[idx];
      discounted[idx] = d;
      probabilities[k] *= d;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) total += probabilities[k];
  total = normalize_or_fail(total);
  for (std::size_t k = 0; k < K; ++k) probabilities[k] /= total;
  return total;
}

FusedPrediction fuse(std::span<const ContourFunction> contours, const ReliabilityMatrix& betas) {
  const int T = betas.modality_count();
  const int K = betas.classes();
  if (static_cast<int>(contours.size()) != T) {
    fail(ErrorCode::DimensionMismatch, "fuse: expected " + std::to_string(T) + " contours, got " +
                                           std::to_string(contours.size()));
  }
  std::vector<double> stacked;
  stacked.reserve(static_cast<std::size_t>(T * K));
  for (const auto& pl : contours) {
    if (!(pl.frame() == betas.frame())) {
      fail(ErrorCode::FrameMismatch, "fuse: contour frame differs from the reliability frame");
    }
    stacked.insert(stacked.end(), pl.values().begin(), pl.values().end());
  }
  FusedPrediction out;
  out.probabilities.resize(static_cast<std::size_t>(K));
  out.discounted_contours.resize(static_cast<std::size_t>(T * K));
  fuse_voxel(stacked, betas.beta(), T, K, out.probabilities, out.discounted_contours);
  return out;
}

void fuse_batch(std::span<const std::span<const double>> contours, const ReliabilityMatrix& betas,
                std::span<double> probabilities) {
  const int T = betas.modality_count();
  const auto K = static_cast<std::size_t>(betas.classes());
  if (static_cast<int>(contours.size()) != T) {
    fail(ErrorCode::DimensionMismatch, "fuse_batch: wrong number of modalities");
  }
  const std::size_t len = probabilities.size();
  if (len % K != 0) fail(ErrorCode::DimensionMismatch, "fuse_batch: output is not N x K");
  const auto& kern = simd::kernels();
  std::vector<double> tiled(len);
  std::fill(probabilities.begin(), probabilities.end(), 1.0);
  for (int t = 0; t < T; ++t) {
    if (contours[static_cast<std::size_t>(t)].size() != len) {
      fail(ErrorCode::DimensionMismatch, "fuse_batch: contour block has the wrong length");
    }
    for (std::size_t i = 0; i < len; ++i) tiled[i] = betas.beta()[static_cast<std::size_t>(t) * K + i % K];
    kern.discount_multiply(contours[static_cast<std::size_t>(t)].data(), tiled.data(),
                           probabilities.data(), len);
  }
  for (std::size_t n = 0; n < len; n += K) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += probabilities[n + k];
    total = normalize_or_fail(total);
    for (std::size_t k = 0; k < K; ++k) probabilities[n + k] /= total;
  }
}

void fuse_voxel_backward(std::span<const double> contours, std::span<const double> beta,
                         int modalities, int classes, std::span<const double> upstream,
                         std::span<double> d_contours, std::span<double> d_beta,
                         std::vector<double>& scratch) {
  const auto T = static_cast<std::size_t>(modalities);
  const auto K = static_cast<std::size_t>(classes);
  // scratch layout: discounted (T*K) | prefix products ((T+1)*K) | probs (K)
  scratch.resize(T * K + (T + 1) * K + K);
  double* disc = scratch.data();
  double* prefix = disc + T * K;
  double* probs = prefix + (T + 1) * K;

  for (std::size_t k = 0; k < K; ++k) prefix[k] = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t idx = t * K + k;
      disc[idx] = 1.0 - beta[idx] + beta[idx] * contours[idx];
      prefix[(t + 1) * K + k] = prefix[t * K + k] * disc[idx];
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) total += prefix[T * K + k];
  total = normalize_or_fail(total);
  double mean_g = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    probs[k] = prefix[T * K + k] / total;
    mean_g += upstream[k] * probs[k];
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double d_product = (upstream[k] - mean_g) / total;
    double suffix = 1.0;
    for (std::size_t t = T; t-- > 0;) {
      const std::size_t idx = t * K + k;
      const double d_disc = d_product * prefix[t * K + k] * suffix;
      d_contours[idx] = d_disc * beta[idx];
      d_beta[idx] += d_disc * (contours[idx] - 1.0);
      suffix *= disc[idx];
    }
  }
}

std::vector<double> beta_to_raw_gradient(const ReliabilityMatrix& betas,
                                         std::span<const double> d_beta) {
  std::vector<double> out(d_beta.size());
  for (std::size_t i = 0; i < d_beta.size(); ++i) {
    const double b = betas.beta()[i];
    out[i] = d_beta[i] * b * (1.0 - b);
  }
  return out;
}

FuseGradients fuse_backward(std::span<const ContourFunction> contours,
                            const ReliabilityMatrix& betas, std::span<const double> upstream) {
  const int T = betas.modality_count();
  const int K = betas.classes();
  if (static_cast<int>(contours.size()) != T || static_cast<int>(upstream.size()) != K) {
    fail(ErrorCode::DimensionMismatch, "fuse_backward: inconsistent sizes");
  }
  std::vector<double> stacked;
  for (const auto& pl : contours) {
    if (!(pl.frame() == betas.frame())) {
      fail(ErrorCode::FrameMismatch, "fuse_backward: contour frame differs from the reliability frame");
    }
    stacked.insert(stacked.end(), pl.values().begin(), pl.values().end());
  }
  FuseGradients g;
  g.contours.assign(static_cast<std::size_t>(T * K), 0.0);
  g.beta.assign(static_cast<std::size_t>(T * K), 0.0);
  std::vector<double> scratch;
  fuse_voxel_backward(stacked, betas.beta(), T, K, upstream, g.contours, g.beta, scratch);
  g.raw = beta_to_raw_gradient(betas, g.beta);
  return g;
}

double fusion_conflict(std::span<const SimpleMassFunction> masses, const ReliabilityMatrix& betas) {
  if (static_cast<int>(masses.size()) != betas.modality_count()) {
    fail(ErrorCode::DimensionMismatch, "fusion_conflict: wrong number of modalities");
  }
  double retained = 1.0;
  MassFunction acc = MassFunction::vacuous(betas.frame());
  for (int t = 0; t < betas.modality_count(); ++t) {
    const auto& m = masses[static_cast<std::size_t>(t)];
    const MassFunction discounted = contextual_discount(m.to_mass_function(), betas.row(t));
    auto step = dempster_combine(acc, discounted);
    retained *= 1.0 - step.conflict;
    acc = std::move(step.mass);
  }
  return 1.0 - retained;
}

void write_beta_csv(std::ostream& out, const ReliabilityMatrix& betas) {
  out << "modality,class,beta\n";
  char buf[32];
  for (int t = 0; t < betas.modality_count(); ++t) {
    for (int k = 0; k < betas.classes(); ++k) {
      std::snprintf(buf, sizeof buf, "%.3f", betas.beta(t, k));
      out << betas.modalities()[static_cast<std::size_t>(t)] << ',' << betas.frame().label(k) << ','
          << buf << '\n';
    }
  }
}

void write_beta_table(std::ostream& out, const ReliabilityMatrix& betas) {
  out << "modality";
  for (const auto& label : betas.frame().labels()) out << ',' << label;
  out << '\n';
  char buf[32];
  for (int t = 0; t < betas.modality_count(); ++t) {
    out << betas.modalities()[static_cast<std::size_t>(t)];
    for (int k = 0; k < betas.classes(); ++k) {
      std::snprintf(buf, sizeof buf, "%.3f", betas.beta(t, k));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace evifuse
