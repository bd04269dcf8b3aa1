#include "evifuse/enn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evifuse/error.hpp"
#include "evifuse/simd/kernels.hpp"

namespace evifuse {

namespace {

void require_input(std::span<const double> x, const EnnParameters& params) {
  if (static_cast<int>(x.size()) != params.feature_dim) {
    fail(ErrorCode::DimensionMismatch, "feature vector has " + std::to_string(x.size()) +
                                           " entries, prototypes have " +
                                           std::to_string(params.feature_dim));
  }
}

}  // namespace

void EnnParameters::validate() const {
  if (prototypes_count < 1 || feature_dim < 1 || classes < 2) {
    fail(ErrorCode::InvalidArgument, "evidence layer needs I >= 1, H >= 1, K >= 2");
  }
  const auto i = static_cast<std::size_t>(prototypes_count);
  if (prototypes.size() != i * static_cast<std::size_t>(feature_dim) || alpha.size() != i ||
      gamma.size() != i || memberships.size() != i * static_cast<std::size_t>(classes)) {
    fail(ErrorCode::DimensionMismatch, "evidence layer parameter arrays have inconsistent sizes");
  }
  for (std::size_t p = 0; p < i; ++p) {
    if (!(alpha[p] >= 0.0 && alpha[p] <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
    }
    if (!(gamma[p] > 0.0) || !std::isfinite(gamma[p])) {
      fail(ErrorCode::InvalidArgument, "gamma must be positive");
    }
    double row = 0.0;
    for (int k = 0; k < classes; ++k) {
      const double u = memberships[p * static_cast<std::size_t>(classes) + static_cast<std::size_t>(k)];
      if (!(u >= 0.0)) fail(ErrorCode::InvalidArgument, "membership degrees must be nonnegative");
      row += u;
    }
    if (std::abs(row - 1.0) > 1e-9) {
      fail(ErrorCode::InvalidArgument, "membership rows must sum to 1");
    }
  }
  for (double v : prototypes) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "prototype coordinates must be finite");
  }
}

EnnParameters init_enn(int prototypes, int classes, int feature_dim, std::uint64_t seed) {
  if (prototypes < 1 || classes < 1 || feature_dim < 1) {
    fail(ErrorCode::InvalidArgument, "init_enn: I, K and H must be at least 1");
  }
  EnnParameters p;
  p.prototypes_count = prototypes;
  p.feature_dim = feature_dim;
  p.classes = classes;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  p.prototypes.resize(static_cast<std::size_t>(prototypes * feature_dim));
  for (double& v : p.prototypes) v = normal(rng);
  p.alpha.assign(static_cast<std::size_t>(prototypes), 0.5);
  p.gamma.assign(static_cast<std::size_t>(prototypes), 0.01);
  p.memberships.resize(static_cast<std::size_t>(prototypes * classes));
  for (int i = 0; i < prototypes; ++i) {
    double row = 0.0;
    for (int k = 0; k < classes; ++k) {
      // 1 - U keeps draws away from zero so rows have positive entries.
      const double u = 1.0 - uniform(rng);
      p.memberships[static_cast<std::size_t>(i * classes + k)] = u;
      row += u;
    }
    for (int k = 0; k < classes; ++k) p.memberships[static_cast<std::size_t>(i * classes + k)] /= row;
  }
  return p;
}

std::vector<double> prototype_activation(std::span<const double> x, const EnnParameters& params) {
  require_input(x, params);
  std::vector<double> s(static_cast<std::size_t>(params.prototypes_count));
  for (int i = 0; i < params.prototypes_count; ++i) {
    const double d = simd::squared_distance(x, params.prototype(i));
    s[static_cast<std::size_t>(i)] =
        params.alpha[static_cast<std::size_t>(i)] * std::exp(-params.gamma[static_cast<std::size_t>(i)] * d);
  }
  return s;
}

SimpleMassFunction prototype_mass(double similarity, std::span<const double> membership_row,
                                  const Frame& frame) {
  if (!(similarity >= 0.0 && similarity <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "prototype similarity must lie in [0,1]");
  }
  if (static_cast<int>(membership_row.size()) != frame.size()) {
    fail(ErrorCode::DimensionMismatch, "membership row length differs from the frame size");
  }
  std::vector<double> singletons(membership_row.size());
  for (std::size_t k = 0; k < singletons.size(); ++k) singletons[k] = membership_row[k] * similarity;
  return SimpleMassFunction(frame, std::move(singletons), 1.0 - similarity);
}

SimpleMassFunction prototype_mass(double similarity, std::span<const double> membership_row) {
  return prototype_mass(similarity, membership_row,
                        Frame::indexed(static_cast<int>(membership_row.size())));
}

void enn_forward_into(std::span<const double> x, const EnnParameters& params, std::span<double> out,
                      OpCount* count) {
  require_input(x, params);
  const int K = params.classes;
  if (static_cast<int>(out.size()) != K + 1) {
    fail(ErrorCode::DimensionMismatch, "output buffer must hold K + 1 masses");
  }
  const auto& kern = simd::kernels();
  const auto H = static_cast<std::size_t>(params.feature_dim);
  double* m = out.data();
  double& theta = out[static_cast<std::size_t>(K)];
  std::fill(out.begin(), out.end(), 0.0);
  theta = 1.0;  // start from the vacuous mass

  for (int i = 0; i < params.prototypes_count; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double d = kern.squared_distance(x.data(), params.prototypes.data() + iu * H, H);
    const double s = params.alpha[iu] * std::exp(-params.gamma[iu] * d);
    const double* u = params.memberships.data() + iu * static_cast<std::size_t>(K);
    // Normalizing by the retained mass equals dividing by 1 - conflict
    // for unit-sum inputs and stays consistent off the simplex.
    const double b_theta = 1.0 - s;
    double norm = theta * b_theta;
    for (int k = 0; k < K; ++k) {
      const double b = u[k] * s;
      m[k] = m[k] * b + m[k] * b_theta + theta * b;
      norm += m[k];
    }
    if (norm <= 1.0 - kTotalConflictThreshold) {
      fail(ErrorCode::TotalConflict, "prototype masses are in total conflict");
    }
    for (int k = 0; k < K; ++k) m[k] /= norm;
    theta = theta * b_theta / norm;
    if (count) count->operations += H + 2 * static_cast<std::size_t>(K);
  }
}

SimpleMassFunction enn_forward(std::span<const double> x, const EnnParameters& params,
                               const Frame& frame) {
  if (frame.size() != params.classes) {
    fail(ErrorCode::FrameMismatch, "frame size differs from the number of classes");
  }
  std::vector<double> out(static_cast<std::size_t>(params.classes + 1));
  enn_forward_into(x, params, out);
  const double theta = out.back();
  out.pop_back();
  return SimpleMassFunction(frame, std::move(out), theta);
}

SimpleMassFunction enn_forward(std::span<const double> x, const EnnParameters& params) {
  return enn_forward(x, params, Frame::indexed(params.classes));
}

EnnGradients EnnGradients::zeros(const EnnParameters& params) {
  EnnGradients g;
  g.input.assign(static_cast<std::size_t>(params.feature_dim), 0.0);
  g.prototypes.assign(params.prototypes.size(), 0.0);
  g.alpha.assign(params.alpha.size(), 0.0);
  g.gamma.assign(params.gamma.size(), 0.0);
  g.memberships.assign(params.memberships.size(), 0.0);
  g.memberships_tangent.assign(params.memberships.size(), 0.0);
  return g;
}

void EnnGradients::project_memberships(int classes) {
  memberships_tangent.resize(memberships.size());
  const auto K = static_cast<std::size_t>(classes);
  for (std::size_t row = 0; row + K <= memberships.size(); row += K) {
    double mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) mean += memberships[row + k];
    mean /= static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) memberships_tangent[row + k] = memberships[row + k] - mean;
  }
}

// The combined masses have the closed form
//   m_k = (P_k - Q) / Z,  m_theta = Q / Z,
//   P_k = prod_i (1 - s_i + u_ik s_i),  Q = prod_i (1 - s_i),
//   Z = sum_k P_k - (K - 1) Q,
// which is what the backward pass differentiates. Leave-one-out products are
// taken from prefix/suffix sweeps so that s_i = 1 needs no special case.
void enn_backward_accumulate(std::span<const double> x, const EnnParameters& params,
                             std::span<const double> upstream, EnnGradients& grads,
                             std::span<double> input_grad, EnnWorkspace& ws) {
  require_input(x, params);
  const int I = params.prototypes_count;
  const int K = params.classes;
  const auto H = static_cast<std::size_t>(params.feature_dim);
  if (static_cast<int>(upstream.size()) != K + 1) {
    fail(ErrorCode::DimensionMismatch, "upstream gradient must hold K + 1 entries");
  }
  const auto& kern = simd::kernels();
  const auto Iu = static_cast<std::size_t>(I);
  const auto Ku = static_cast<std::size_t>(K);
  const std::size_t cols = Ku + 1;  // column K holds 1 - s_i

  ws.similarity.resize(Iu);
  ws.expo.resize(Iu);
  ws.dist.resize(Iu);
  ws.factors.resize(Iu * cols);
  ws.prefix.resize((Iu + 1) * cols);
  ws.d_factor.resize(Iu * cols);

  for (std::size_t i = 0; i < Iu; ++i) {
    const double d = kern.squared_distance(x.data(), params.prototypes.data() + i * H, H);
    ws.dist[i] = d;
    ws.expo[i] = std::exp(-params.gamma[i] * d);
    const double s = params.alpha[i] * ws.expo[i];
    ws.similarity[i] = s;
    for (std::size_t k = 0; k < Ku; ++k) {
      ws.factors[i * cols + k] = 1.0 - s + params.memberships[i * Ku + k] * s;
    }
    ws.factors[i * cols + Ku] = 1.0 - s;
  }
  for (std::size_t c = 0; c < cols; ++c) ws.prefix[c] = 1.0;
  for (std::size_t i = 0; i < Iu; ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      ws.prefix[(i + 1) * cols + c] = ws.prefix[i * cols + c] * ws.factors[i * cols + c];
    }
  }
  const double* total = ws.prefix.data() + Iu * cols;  // P_0..P_{K-1}, Q
  const double q = total[Ku];
  double z = -static_cast<double>(K - 1) * q;
  for (std::size_t k = 0; k < Ku; ++k) z += total[k];
  if (!(z > 0.0)) fail(ErrorCode::TotalConflict, "prototype masses are in total conflict");

  double weighted = upstream[Ku] * q;
  double g_sum = 0.0;
  for (std::size_t k = 0; k < Ku; ++k) {
    weighted += upstream[k] * (total[k] - q);
    g_sum += upstream[k];
  }
  const double d_z = -weighted / (z * z);
  // dL/dP_k and dL/dQ in the product columns.
  ws.d_cols.resize(cols);
  double* d_cols = ws.d_cols.data();
  for (std::size_t k = 0; k < Ku; ++k) d_cols[k] = upstream[k] / z + d_z;
  d_cols[Ku] = (upstream[Ku] - g_sum) / z - static_cast<double>(K - 1) * d_z;

  // Suffix sweep: d_factor[i][c] = d_cols[c] * prefix[i][c] * suffix[i+1][c].
  auto& suffix = ws.suffix;
  suffix.assign(cols, 1.0);
  for (std::size_t ii = Iu; ii-- > 0;) {
    for (std::size_t c = 0; c < cols; ++c) {
      ws.d_factor[ii * cols + c] = d_cols[c] * ws.prefix[ii * cols + c] * suffix[c];
      suffix[c] *= ws.factors[ii * cols + c];
    }
  }

  for (std::size_t i = 0; i < Iu; ++i) {
    const double s = ws.similarity[i];
    double d_s = -ws.d_factor[i * cols + Ku];
    for (std::size_t k = 0; k < Ku; ++k) {
      const double df = ws.d_factor[i * cols + k];
      const double u = params.memberships[i * Ku + k];
      d_s += df * (u - 1.0);
      grads.memberships[i * Ku + k] += df * s;
    }
    grads.alpha[i] += d_s * ws.expo[i];
    grads.gamma[i] -= d_s * s * ws.dist[i];
    const double d_dist = -d_s * params.gamma[i] * s;
    const double* p = params.prototypes.data() + i * H;
    double* gp = grads.prototypes.data() + i * H;
    for (std::size_t h = 0; h < H; ++h) {
      const double diff = 2.0 * d_dist * (x[h] - p[h]);
      input_grad[h] += diff;
      gp[h] -= diff;
    }
  }
}

EnnGradients enn_backward(std::span<const double> x, const EnnParameters& params,
                          std::span<const double> upstream) {
  EnnGradients grads = EnnGradients::zeros(params);
  EnnWorkspace ws;
  enn_backward_accumulate(x, params, upstream, grads, grads.input, ws);
  grads.project_memberships(params.classes);
  return grads;
}

}  // namespace evifuse
