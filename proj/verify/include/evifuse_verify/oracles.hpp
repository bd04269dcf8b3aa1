#pragma once

// Brute-force reference implementations. Everything here works on dense
// 2^K mass vectors or plain loops and shares no code with the library
// algorithms it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "evifuse/dst.hpp"
#include "evifuse/enn.hpp"
#include "evifuse/extractor.hpp"

namespace evifuse::oracle {

/// Mass indexed by subset bitmask, size 2^K.
using Dense = std::vector<double>;

inline std::uint32_t full_mask(int K) { return (1u << K) - 1u; }

inline Dense to_dense(const MassFunction& m) {
  const int K = m.frame().size();
  Dense d(std::size_t{1} << K, 0.0);
  for (std::uint32_t a = 0; a < d.size(); ++a) d[a] = m.mass(Subset(a));
  return d;
}

inline Dense vacuous(int K) {
  Dense d(std::size_t{1} << K, 0.0);
  d[full_mask(K)] = 1.0;
  return d;
}

/// Lifts singleton masses plus frame mass to a dense vector.
inline Dense simple_to_dense(std::span<const double> singletons, double theta) {
  const int K = static_cast<int>(singletons.size());
  Dense d(std::size_t{1} << K, 0.0);
  for (int k = 0; k < K; ++k) d[1u << k] += singletons[static_cast<std::size_t>(k)];
  d[full_mask(K)] += theta;
  return d;
}

struct DenseCombination {
  Dense mass;
  double conflict = 0.0;
};

/// Dempster's rule by enumerating every pair of subsets.
inline DenseCombination dempster(const Dense& a, const Dense& b) {
  Dense out(a.size(), 0.0);
  double conflict = 0.0;
  for (std::uint32_t x = 0; x < a.size(); ++x) {
    for (std::uint32_t y = 0; y < b.size(); ++y) {
      const double w = a[x] * b[y];
      if ((x & y) == 0) {
        conflict += w;
      } else {
        out[x & y] += w;
      }
    }
  }
  for (double& v : out) v /= 1.0 - conflict;
  return {out, conflict};
}

inline double belief(const Dense& m, std::uint32_t a) {
  double s = 0.0;
  for (std::uint32_t b = 1; b < m.size(); ++b) {
    if ((b & ~a) == 0) s += m[b];
  }
  return s;
}

inline double plausibility(const Dense& m, std::uint32_t a) {
  double s = 0.0;
  for (std::uint32_t b = 1; b < m.size(); ++b) {
    if ((b & a) != 0) s += m[b];
  }
  return s;
}

inline std::vector<double> contour(const Dense& m, int K) {
  std::vector<double> pl(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) pl[static_cast<std::size_t>(k)] = plausibility(m, 1u << k);
  return pl;
}

/// m(A) = sum over B subset of A of m(B) * prod_{k in A\B} (1 - beta_k) * prod_{l not in A} beta_l,
/// evaluated with an outer loop over A and an inner loop over all B.
inline Dense contextual_discount(const Dense& m, std::span<const double> beta) {
  const int K = static_cast<int>(beta.size());
  Dense out(m.size(), 0.0);
  for (std::uint32_t a = 0; a < m.size(); ++a) {
    double outside = 1.0;
    for (int l = 0; l < K; ++l) {
      if (!(a & (1u << l))) outside *= beta[static_cast<std::size_t>(l)];
    }
    for (std::uint32_t b = 0; b < m.size(); ++b) {
      if ((b & ~a) != 0 || m[b] == 0.0) continue;
      double added = 1.0;
      for (int k = 0; k < K; ++k) {
        const std::uint32_t bit = 1u << k;
        if ((a & bit) && !(b & bit)) added *= 1.0 - beta[static_cast<std::size_t>(k)];
      }
      out[a] += m[b] * added * outside;
    }
  }
  return out;
}

inline Dense condition(const Dense& m, std::uint32_t a) {
  Dense categorical(m.size(), 0.0);
  categorical[a] = 1.0;
  return dempster(m, categorical).mass;
}

/// Mass function of the evidence layer: the prototype masses combined one
/// by one with the enumerating Dempster rule.
inline Dense enn_forward(std::span<const double> x, const EnnParameters& p) {
  const int K = p.classes;
  Dense acc = vacuous(K);
  for (int i = 0; i < p.prototypes_count; ++i) {
    double d2 = 0.0;
    for (int h = 0; h < p.feature_dim; ++h) {
      const double diff = x[static_cast<std::size_t>(h)] - p.prototypes[static_cast<std::size_t>(i * p.feature_dim + h)];
      d2 += diff * diff;
    }
    const double s = p.alpha[static_cast<std::size_t>(i)] * std::exp(-p.gamma[static_cast<std::size_t>(i)] * d2);
    std::vector<double> singletons(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      singletons[static_cast<std::size_t>(k)] = p.memberships[static_cast<std::size_t>(i * K + k)] * s;
    }
    acc = dempster(acc, simple_to_dense(singletons, 1.0 - s)).mass;
  }
  return acc;
}

/// Fused class probabilities: contextually discount each modality's full
/// mass function, combine all of them, normalize the contour.
inline std::vector<double> fuse(std::span<const Dense> masses, std::span<const double> beta, int K) {
  Dense acc = vacuous(K);
  for (std::size_t t = 0; t < masses.size(); ++t) {
    const auto discounted = contextual_discount(masses[t], beta.subspan(t * static_cast<std::size_t>(K), static_cast<std::size_t>(K)));
    acc = dempster(acc, discounted).mass;
  }
  auto pl = contour(acc, K);
  double total = 0.0;
  for (double v : pl) total += v;
  for (double& v : pl) v /= total;
  return pl;
}

/// Patch features with explicit loops: edge-replicated window, affine
/// layers, tanh between layers.
inline std::vector<double> extract(const ModalityImage& img, const ExtractorParams& p) {
  std::vector<double> out;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      std::vector<double> v;
      for (int c = 0; c < img.channels; ++c) {
        for (int dy = -p.radius; dy <= p.radius; ++dy) {
          for (int dx = -p.radius; dx <= p.radius; ++dx) {
            const int yy = std::min(std::max(y + dy, 0), img.height - 1);
            const int xx = std::min(std::max(x + dx, 0), img.width - 1);
            v.push_back(img.at(c, yy, xx));
          }
        }
      }
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        std::vector<double> next(static_cast<std::size_t>(layer.outputs));
        for (int o = 0; o < layer.outputs; ++o) {
          double z = layer.bias[static_cast<std::size_t>(o)];
          for (int i = 0; i < layer.inputs; ++i) {
            z += layer.weights[static_cast<std::size_t>(o * layer.inputs + i)] * v[static_cast<std::size_t>(i)];
          }
          next[static_cast<std::size_t>(o)] = l + 1 < p.layers.size() ? std::tanh(z) : z;
        }
        v = std::move(next);
      }
      out.insert(out.end(), v.begin(), v.end());
    }
  }
  return out;
}

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double(std::span<const double>)>& f,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

/// |a - b| relative to the larger magnitude, with an absolute floor.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace evifuse::oracle
