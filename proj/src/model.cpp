#include "evifuse/model.hpp"

#include <algorithm>
#include <cmath>

#include "evifuse/error.hpp"
#include "evifuse/seed.hpp"

namespace evifuse {

void LabeledExample::validate(int modalities, int classes) const {
  if (static_cast<int>(images.size()) != modalities) {
    fail(ErrorCode::DimensionMismatch, "example has " + std::to_string(images.size()) +
                                           " modality images, expected " +
                                           std::to_string(modalities));
  }
  for (const auto& img : images) {
    if (img.width != labels.width || img.height != labels.height) {
      fail(ErrorCode::DimensionMismatch, "modality image and label grid dimensions differ");
    }
  }
  for (auto v : labels.labels) {
    if (v >= classes) fail(ErrorCode::InvalidArgument, "label index outside the frame");
  }
}

std::vector<double> one_hot(const LabelGrid& labels, int classes) {
  std::vector<double> g(labels.voxels() * static_cast<std::size_t>(classes), 0.0);
  for (std::size_t n = 0; n < labels.voxels(); ++n) {
    g[n * static_cast<std::size_t>(classes) + labels.labels[n]] = 1.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(Frame frame, std::vector<std::unique_ptr<FeatureExtractor>> extractors,
             std::vector<EnnParameters> enns, ReliabilityMatrix reliability)
    : frame_(std::move(frame)),
      extractors_(std::move(extractors)),
      enns_(std::move(enns)),
      reliability_(std::move(reliability)) {
  const auto T = extractors_.size();
  if (T == 0 || enns_.size() != T || static_cast<std::size_t>(reliability_.modality_count()) != T) {
    fail(ErrorCode::DimensionMismatch, "model needs one extractor, evidence layer and reliability row per modality");
  }
  if (!(reliability_.frame() == frame_)) {
    fail(ErrorCode::FrameMismatch, "reliability matrix frame differs from the model frame");
  }
  for (std::size_t t = 0; t < T; ++t) {
    enns_[t].validate();
    if (enns_[t].classes != frame_.size()) {
      fail(ErrorCode::DimensionMismatch, "evidence layer class count differs from the frame");
    }
    if (enns_[t].feature_dim != extractors_[t]->feature_count()) {
      fail(ErrorCode::DimensionMismatch, "extractor feature count differs from prototype dimension");
    }
  }
}

Model::Model(const Model& other)
    : frame_(other.frame_), enns_(other.enns_), reliability_(other.reliability_) {
  extractors_.reserve(other.extractors_.size());
  for (const auto& e : other.extractors_) extractors_.push_back(e->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Model init_model(const ModelConfig& config, Frame frame, std::vector<std::string> modalities,
                 std::span<const int> channels, std::uint64_t seed) {
  const std::size_t T = modalities.size();
  if (T == 0 || channels.size() != T) {
    fail(ErrorCode::InvalidArgument, "init_model needs a channel count per modality");
  }
  std::vector<std::unique_ptr<FeatureExtractor>> extractors;
  std::vector<EnnParameters> enns;
  for (std::size_t t = 0; t < T; ++t) {
    extractors.push_back(std::make_unique<PatchExtractor>(init_extractor(
        channels[t], config.features, config.radius, config.hidden, derive_seed(seed, 2 * t))));
    enns.push_back(init_enn(config.prototypes, frame.size(), config.features, derive_seed(seed, 2 * t + 1)));
  }
  auto reliability = init_reliability(frame, std::move(modalities));
  return Model(std::move(frame), std::move(extractors), std::move(enns), std::move(reliability));
}

// ---------------------------------------------------------------------------
// Forward

ProbabilityMap ForwardPass::modality_probabilities(int t) const {
  ProbabilityMap out;
  out.width = fused.width;
  out.height = fused.height;
  out.classes = fused.classes;
  const auto& pl = contours.at(static_cast<std::size_t>(t));
  out.values.resize(pl.size());
  const auto K = static_cast<std::size_t>(fused.classes);
  for (std::size_t n = 0; n < pl.size(); n += K) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += pl[n + k];
    if (!(total > 0.0)) fail(ErrorCode::ZeroDenominator, "all singleton plausibilities are zero");
    for (std::size_t k = 0; k < K; ++k) out.values[n + k] = pl[n + k] / total;
  }
  return out;
}

ForwardPass forward(const Model& model, std::span<const ModalityImage> images) {
  const int T = model.modalities();
  const auto K = static_cast<std::size_t>(model.classes());
  if (static_cast<int>(images.size()) != T) {
    fail(ErrorCode::DimensionMismatch, "forward: expected one image per modality");
  }
  ForwardPass fp;
  fp.features.resize(static_cast<std::size_t>(T));
  fp.masses.resize(static_cast<std::size_t>(T));
  fp.contours.resize(static_cast<std::size_t>(T));
  const std::size_t N = images[0].voxels();
  for (int t = 0; t < T; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const auto& img = images[tu];
    if (img.width != images[0].width || img.height != images[0].height) {
      fail(ErrorCode::DimensionMismatch, "modality images differ in size");
    }
    fp.features[tu] = model.extractor(t).extract(img);
    auto& masses = fp.masses[tu];
    auto& pl = fp.contours[tu];
    masses.resize(N * (K + 1));
    pl.resize(N * K);
    for (std::size_t n = 0; n < N; ++n) {
      std::span<double> m(masses.data() + n * (K + 1), K + 1);
      enn_forward_into(fp.features[tu].voxel(n), model.enn(t), m);
      for (std::size_t k = 0; k < K; ++k) pl[n * K + k] = m[k] + m[K];
    }
  }
  fp.fused.width = images[0].width;
  fp.fused.height = images[0].height;
  fp.fused.classes = model.classes();
  fp.fused.values.resize(N * K);
  std::vector<std::span<const double>> blocks;
  for (const auto& pl : fp.contours) blocks.emplace_back(pl);
  fuse_batch(blocks, model.reliability(), fp.fused.values);
  return fp;
}

// ---------------------------------------------------------------------------
// Losses

double dice_loss(std::span<const double> prediction, const LabelGrid& truth, int classes,
                 std::span<double> grad) {
  const auto K = static_cast<std::size_t>(classes);
  const std::size_t N = truth.voxels();
  if (N == 0) fail(ErrorCode::EmptyRegion, "Dice loss over an empty grid");
  if (prediction.size() != N * K) fail(ErrorCode::DimensionMismatch, "prediction is not N x K");
  double overlap = 0.0;
  double mass = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t label = truth.labels[n];
    for (std::size_t k = 0; k < K; ++k) mass += prediction[n * K + k];
    overlap += prediction[n * K + label];
  }
  const double denom = mass + static_cast<double>(N);  // sum of G is N
  const double loss = 1.0 - 2.0 * overlap / denom;
  if (!grad.empty()) {
    if (grad.size() != N * K) fail(ErrorCode::DimensionMismatch, "gradient buffer is not N x K");
    const double on = -2.0 * (denom - overlap) / (denom * denom);
    const double off = 2.0 * overlap / (denom * denom);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) grad[n * K + k] = off;
      grad[n * K + truth.labels[n]] = on;
    }
  }
  return loss;
}

namespace {

std::vector<double> singletons_of(const std::vector<double>& masses, std::size_t K) {
  const std::size_t N = masses.size() / (K + 1);
  std::vector<double> y(N * K);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(masses.begin() + static_cast<std::ptrdiff_t>(n * (K + 1)), K,
                y.begin() + static_cast<std::ptrdiff_t>(n * K));
  }
  return y;
}

}  // namespace

double loss_source(std::span<const std::vector<double>> masses, const LabelGrid& truth, int classes) {
  double total = 0.0;
  for (const auto& m : masses) {
    if (m.size() != truth.voxels() * static_cast<std::size_t>(classes + 1)) {
      fail(ErrorCode::DimensionMismatch, "loss_source: mass block is not N x (K + 1)");
    }
    total += dice_loss(singletons_of(m, static_cast<std::size_t>(classes)), truth, classes);
  }
  return total;
}

double loss_source(std::span<const std::vector<SimpleMassFunction>> masses, const LabelGrid& truth) {
  double total = 0.0;
  for (const auto& grid : masses) {
    if (grid.size() != truth.voxels() || grid.empty()) {
      fail(ErrorCode::DimensionMismatch, "loss_source: one mass function per voxel is required");
    }
    const int K = grid.front().frame().size();
    std::vector<double> y;
    y.reserve(grid.size() * static_cast<std::size_t>(K));
    for (const auto& m : grid) y.insert(y.end(), m.singleton_masses().begin(), m.singleton_masses().end());
    total += dice_loss(y, truth, K);
  }
  return total;
}

double loss_fused(const ProbabilityMap& probs, const LabelGrid& truth) {
  if (probs.width != truth.width || probs.height != truth.height) {
    fail(ErrorCode::DimensionMismatch, "loss_fused: grid sizes differ");
  }
  return dice_loss(probs.values, truth, probs.classes);
}

// ---------------------------------------------------------------------------
// Gradient

ModelGradient ModelGradient::zeros(const Model& model) {
  ModelGradient g;
  for (int t = 0; t < model.modalities(); ++t) {
    g.extractors.emplace_back(model.extractor(t).parameter_count(), 0.0);
    g.enns.push_back(EnnGradients::zeros(model.enn(t)));
  }
  g.beta.assign(model.reliability().raw().size(), 0.0);
  g.beta_raw.assign(model.reliability().raw().size(), 0.0);
  return g;
}

void ModelGradient::add(const ModelGradient& other, double scale) {
  auto axpy = [scale](std::vector<double>& into, const std::vector<double>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * from[i];
  };
  for (std::size_t t = 0; t < extractors.size(); ++t) {
    axpy(extractors[t], other.extractors[t]);
    axpy(enns[t].input, other.enns[t].input);
    axpy(enns[t].prototypes, other.enns[t].prototypes);
    axpy(enns[t].alpha, other.enns[t].alpha);
    axpy(enns[t].gamma, other.enns[t].gamma);
    axpy(enns[t].memberships, other.enns[t].memberships);
    axpy(enns[t].memberships_tangent, other.enns[t].memberships_tangent);
  }
  axpy(beta, other.beta);
  axpy(beta_raw, other.beta_raw);
}

LossTerms loss_and_gradient(const Model& model, const LabeledExample& example, ModelGradient* grad,
                            LossSelection terms) {
  const int T = model.modalities();
  const int K = model.classes();
  example.validate(T, K);
  const auto Ku = static_cast<std::size_t>(K);
  const auto Tu = static_cast<std::size_t>(T);
  const std::size_t N = example.labels.voxels();

  const ForwardPass fp = forward(model, example.images);
  LossTerms loss;

  std::vector<std::vector<double>> d_singletons(Tu);
  std::vector<double> d_fused;
  if (terms.source) {
    for (std::size_t t = 0; t < Tu; ++t) {
      const auto y = singletons_of(fp.masses[t], Ku);
      if (grad) d_singletons[t].resize(N * Ku);
      loss.source += dice_loss(y, example.labels, K, grad ? std::span<double>(d_singletons[t]) : std::span<double>());
    }
  }
  if (terms.fused) {
    if (grad) d_fused.resize(N * Ku);
    loss.fused = dice_loss(fp.fused.values, example.labels, K,
                           grad ? std::span<double>(d_fused) : std::span<double>());
  }
  if (!grad) return loss;

  // dL/d(masses) per modality, N x (K + 1).
  std::vector<std::vector<double>> d_masses(Tu, std::vector<double>(N * (Ku + 1), 0.0));
  if (terms.source) {
    for (std::size_t t = 0; t < Tu; ++t) {
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < Ku; ++k) d_masses[t][n * (Ku + 1) + k] += d_singletons[t][n * Ku + k];
      }
    }
  }
  if (terms.fused) {
    std::vector<double> stacked(Tu * Ku);
    std::vector<double> d_contours(Tu * Ku);
    std::vector<double> d_beta(Tu * Ku, 0.0);
    std::vector<double> scratch;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t t = 0; t < Tu; ++t) {
        std::copy_n(fp.contours[t].begin() + static_cast<std::ptrdiff_t>(n * Ku), Ku,
                    stacked.begin() + static_cast<std::ptrdiff_t>(t * Ku));
      }
      fuse_voxel_backward(stacked, model.reliability().beta(), T, K,
                          std::span<const double>(d_fused).subspan(n * Ku, Ku), d_contours, d_beta,
                          scratch);
      // pl_k = m_k + m_theta
      for (std::size_t t = 0; t < Tu; ++t) {
        double* dm = d_masses[t].data() + n * (Ku + 1);
        for (std::size_t k = 0; k < Ku; ++k) {
          dm[k] += d_contours[t * Ku + k];
          dm[Ku] += d_contours[t * Ku + k];
        }
      }
    }
    const auto d_raw = beta_to_raw_gradient(model.reliability(), d_beta);
    for (std::size_t i = 0; i < d_beta.size(); ++i) {
      grad->beta[i] += d_beta[i];
      grad->beta_raw[i] += d_raw[i];
    }
  }

  EnnWorkspace ws;
  for (int t = 0; t < T; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const auto& enn = model.enn(t);
    const auto H = static_cast<std::size_t>(enn.feature_dim);
    std::vector<double> d_features(N * H, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      enn_backward_accumulate(fp.features[tu].voxel(n), enn,
                              std::span<const double>(d_masses[tu]).subspan(n * (Ku + 1), Ku + 1),
                              grad->enns[tu], std::span<double>(d_features).subspan(n * H, H), ws);
    }
    model.extractor(t).backward(example.images[tu], d_features, grad->extractors[tu]);
    grad->enns[tu].project_memberships(K);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Packing

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) fail(ErrorCode::InvalidArgument, "softplus_inverse needs a positive value");
  return y + std::log(-std::expm1(-y));
}

ParameterLayout ParameterLayout::of(const Model& model) {
  ParameterLayout layout;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    ParameterBlock b{at, n};
    at += n;
    return b;
  };
  for (int t = 0; t < model.modalities(); ++t) {
    layout.extractors.push_back(take(model.extractor(t).parameter_count()));
  }
  for (int t = 0; t < model.modalities(); ++t) {
    const auto& e = model.enn(t);
    layout.prototypes.push_back(take(e.prototypes.size()));
    layout.alpha.push_back(take(e.alpha.size()));
    layout.gamma.push_back(take(e.gamma.size()));
    layout.memberships.push_back(take(e.memberships.size()));
  }
  layout.beta = take(model.reliability().raw().size());
  layout.total = at;
  return layout;
}

namespace {

constexpr double kUnitClamp = 1e-12;

double logit(double p) {
  const double c = std::clamp(p, kUnitClamp, 1.0 - kUnitClamp);
  return std::log(c) - std::log1p(-c);
}

}  // namespace

std::vector<double> pack_parameters(const Model& model) {
  const auto layout = ParameterLayout::of(model);
  std::vector<double> raw(layout.total);
  for (int t = 0; t < model.modalities(); ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const auto flat = model.extractor(t).parameters();
    std::copy(flat.begin(), flat.end(), raw.begin() + static_cast<std::ptrdiff_t>(layout.extractors[tu].offset));
    const auto& e = model.enn(t);
    std::copy(e.prototypes.begin(), e.prototypes.end(),
              raw.begin() + static_cast<std::ptrdiff_t>(layout.prototypes[tu].offset));
    for (std::size_t i = 0; i < e.alpha.size(); ++i) {
      raw[layout.alpha[tu].offset + i] = logit(e.alpha[i]);
      raw[layout.gamma[tu].offset + i] = softplus_inverse(e.gamma[i]);
    }
    for (std::size_t i = 0; i < e.memberships.size(); ++i) {
      raw[layout.memberships[tu].offset + i] = std::log(std::max(e.memberships[i], 1e-300));
    }
  }
  const auto beta_raw = model.reliability().raw();
  std::copy(beta_raw.begin(), beta_raw.end(), raw.begin() + static_cast<std::ptrdiff_t>(layout.beta.offset));
  return raw;
}

void unpack_parameters(std::span<const double> raw, Model& model) {
  const auto layout = ParameterLayout::of(model);
  if (raw.size() != layout.total) fail(ErrorCode::DimensionMismatch, "packed parameter vector has the wrong length");
  for (int t = 0; t < model.modalities(); ++t) {
    const auto tu = static_cast<std::size_t>(t);
    model.extractor(t).set_parameters(raw.subspan(layout.extractors[tu].offset, layout.extractors[tu].size));
    auto& e = model.enn(t);
    const auto protos = raw.subspan(layout.prototypes[tu].offset, layout.prototypes[tu].size);
    std::copy(protos.begin(), protos.end(), e.prototypes.begin());
    for (std::size_t i = 0; i < e.alpha.size(); ++i) {
      e.alpha[i] = squash(raw[layout.alpha[tu].offset + i]);
      e.gamma[i] = softplus(raw[layout.gamma[tu].offset + i]);
    }
    const auto K = static_cast<std::size_t>(e.classes);
    for (std::size_t row = 0; row < e.alpha.size(); ++row) {
      const double* w = raw.data() + layout.memberships[tu].offset + row * K;
      const double top = *std::max_element(w, w + K);
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        e.memberships[row * K + k] = std::exp(w[k] - top);
        total += e.memberships[row * K + k];
      }
      for (std::size_t k = 0; k < K; ++k) e.memberships[row * K + k] /= total;
    }
  }
  model.reliability().set_raw(raw.subspan(layout.beta.offset, layout.beta.size));
}

std::vector<double> packed_gradient(const Model& model, const ModelGradient& grad) {
  const auto layout = ParameterLayout::of(model);
  std::vector<double> out(layout.total, 0.0);
  for (int t = 0; t < model.modalities(); ++t) {
    const auto tu = static_cast<std::size_t>(t);
    std::copy(grad.extractors[tu].begin(), grad.extractors[tu].end(),
              out.begin() + static_cast<std::ptrdiff_t>(layout.extractors[tu].offset));
    const auto& e = model.enn(t);
    const auto& g = grad.enns[tu];
    std::copy(g.prototypes.begin(), g.prototypes.end(),
              out.begin() + static_cast<std::ptrdiff_t>(layout.prototypes[tu].offset));
    for (std::size_t i = 0; i < e.alpha.size(); ++i) {
      out[layout.alpha[tu].offset + i] = g.alpha[i] * e.alpha[i] * (1.0 - e.alpha[i]);
      // d softplus(x)/dx = logistic(x), and logistic(x) = 1 - exp(-gamma)
      out[layout.gamma[tu].offset + i] = g.gamma[i] * -std::expm1(-e.gamma[i]);
    }
    const auto K = static_cast<std::size_t>(e.classes);
    for (std::size_t row = 0; row < e.alpha.size(); ++row) {
      double mean = 0.0;
      for (std::size_t k = 0; k < K; ++k) mean += e.memberships[row * K + k] * g.memberships[row * K + k];
      for (std::size_t k = 0; k < K; ++k) {
        const double u = e.memberships[row * K + k];
        out[layout.memberships[tu].offset + row * K + k] = u * (g.memberships[row * K + k] - mean);
      }
    }
  }
  std::copy(grad.beta_raw.begin(), grad.beta_raw.end(),
            out.begin() + static_cast<std::ptrdiff_t>(layout.beta.offset));
  return out;
}

}  // namespace evifuse
