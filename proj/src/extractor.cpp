#include "evifuse/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "evifuse/binary_io.hpp"
#include "evifuse/error.hpp"
#include "evifuse/simd/kernels.hpp"

namespace evifuse {

ModalityImage::ModalityImage(int w, int h, int c) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || c < 1) fail(ErrorCode::InvalidArgument, "image sizes must be positive");
  data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c),
              0.0);
}

std::size_t ExtractorParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> ExtractorParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void ExtractorParams::unflatten(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    fail(ErrorCode::DimensionMismatch, "extractor parameter vector has the wrong length");
  }
  std::size_t at = 0;
  for (auto& layer : layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), layer.weights.size(), layer.weights.begin());
    at += layer.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), layer.bias.size(), layer.bias.begin());
    at += layer.bias.size();
  }
}

void ExtractorParams::validate() const {
  if (channels < 1 || radius < 0) fail(ErrorCode::InvalidArgument, "extractor needs C >= 1, r >= 0");
  if (layers.empty()) fail(ErrorCode::InvalidArgument, "extractor needs at least one layer");
  int expected = patch_size();
  for (const auto& layer : layers) {
    if (layer.inputs != expected || layer.outputs < 1 ||
        layer.weights.size() != static_cast<std::size_t>(layer.inputs * layer.outputs) ||
        layer.bias.size() != static_cast<std::size_t>(layer.outputs)) {
      fail(ErrorCode::DimensionMismatch, "extractor layer shapes do not chain");
    }
    for (double v : layer.weights) {
      if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite extractor weight");
    }
    for (double v : layer.bias) {
      if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite extractor bias");
    }
    expected = layer.outputs;
  }
}

ExtractorParams init_extractor(int channels, int features, int radius, int hidden,
                               std::uint64_t seed) {
  if (channels < 1 || features < 1 || radius < 0 || hidden < 1) {
    fail(ErrorCode::InvalidArgument, "init_extractor: sizes must be at least 1 (radius >= 0)");
  }
  ExtractorParams p;
  p.channels = channels;
  p.radius = radius;
  std::mt19937_64 rng(seed);
  auto make_layer = [&](int in, int out) {
    DenseLayer layer;
    layer.inputs = in;
    layer.outputs = out;
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    layer.weights.resize(static_cast<std::size_t>(in * out));
    for (double& w : layer.weights) w = normal(rng);
    layer.bias.assign(static_cast<std::size_t>(out), 0.0);
    return layer;
  };
  p.layers.push_back(make_layer(p.patch_size(), hidden));
  p.layers.push_back(make_layer(hidden, features));
  return p;
}

namespace {

// Gathers the edge-replicated patch around (y, x); order is channel, dy, dx.
void gather_patch(const ModalityImage& img, int radius, int y, int x, double* patch) {
  std::size_t at = 0;
  for (int c = 0; c < img.channels; ++c) {
    for (int dy = -radius; dy <= radius; ++dy) {
      const int yy = std::clamp(y + dy, 0, img.height - 1);
      for (int dx = -radius; dx <= radius; ++dx) {
        const int xx = std::clamp(x + dx, 0, img.width - 1);
        patch[at++] = img.at(c, yy, xx);
      }
    }
  }
}

void check_image(const ModalityImage& img, const ExtractorParams& params) {
  if (img.channels != params.channels) {
    fail(ErrorCode::DimensionMismatch, "image has " + std::to_string(img.channels) +
                                           " channels, extractor expects " +
                                           std::to_string(params.channels));
  }
  if (img.data.size() != img.voxels() * static_cast<std::size_t>(img.channels)) {
    fail(ErrorCode::DimensionMismatch, "image plane storage does not match its dimensions");
  }
}

// Activations of every layer for one voxel: acts[0] is the patch,
// acts[l + 1] the output of layer l (after tanh for hidden layers).
struct Activations {
  std::vector<std::vector<double>> acts;

  explicit Activations(const ExtractorParams& params) {
    acts.resize(params.layers.size() + 1);
    acts[0].resize(static_cast<std::size_t>(params.patch_size()));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      acts[l + 1].resize(static_cast<std::size_t>(params.layers[l].outputs));
    }
  }
};

void forward_voxel(const ModalityImage& img, const ExtractorParams& params, int y, int x,
                   Activations& a) {
  const auto& kern = simd::kernels();
  gather_patch(img, params.radius, y, x, a.acts[0].data());
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const auto in = static_cast<std::size_t>(layer.inputs);
    const double* src = a.acts[l].data();
    double* dst = a.acts[l + 1].data();
    for (int o = 0; o < layer.outputs; ++o) {
      const double z = layer.bias[static_cast<std::size_t>(o)] +
                       kern.dot(layer.weights.data() + static_cast<std::size_t>(o) * in, src, in);
      dst[o] = l == last ? z : std::tanh(z);
    }
  }
}

}  // namespace

FeatureMap extract(const ModalityImage& img, const ExtractorParams& params) {
  params.validate();
  check_image(img, params);
  FeatureMap out;
  out.width = img.width;
  out.height = img.height;
  out.features = params.feature_count();
  out.values.resize(img.voxels() * static_cast<std::size_t>(out.features));
  Activations a(params);
  const auto H = static_cast<std::size_t>(out.features);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      forward_voxel(img, params, y, x, a);
      const auto n = static_cast<std::size_t>(y * img.width + x);
      std::copy_n(a.acts.back().begin(), H, out.values.begin() + static_cast<std::ptrdiff_t>(n * H));
    }
  }
  return out;
}

ExtractorGradients extract_backward(const ModalityImage& img, const ExtractorParams& params,
                                    std::span<const double> upstream, bool want_input) {
  params.validate();
  check_image(img, params);
  const auto H = static_cast<std::size_t>(params.feature_count());
  if (upstream.size() != img.voxels() * H) {
    fail(ErrorCode::DimensionMismatch, "upstream gradient must be N x H");
  }
  const auto& kern = simd::kernels();
  ExtractorGradients grads;
  grads.params.assign(params.parameter_count(), 0.0);
  if (want_input) grads.input.assign(img.data.size(), 0.0);

  // Offsets of each layer's weights and bias inside the flat gradient.
  std::vector<std::size_t> offset(params.layers.size());
  {
    std::size_t at = 0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      offset[l] = at;
      at += params.layers[l].weights.size() + params.layers[l].bias.size();
    }
  }

  Activations a(params);
  std::vector<std::vector<double>> delta(params.layers.size() + 1);
  for (std::size_t l = 0; l < delta.size(); ++l) delta[l].resize(a.acts[l].size());
  const int r = params.radius;

  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto n = static_cast<std::size_t>(y * img.width + x);
      const double* g = upstream.data() + n * H;
      bool any = false;
      for (std::size_t h = 0; h < H; ++h) any = any || g[h] != 0.0;
      if (!any) continue;

      forward_voxel(img, params, y, x, a);
      std::copy_n(g, H, delta.back().begin());
      for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        const auto in = static_cast<std::size_t>(layer.inputs);
        double* d_out = delta[l + 1].data();
        if (l + 1 != params.layers.size()) {
          // Through tanh: d/dz tanh(z) = 1 - tanh(z)^2.
          for (std::size_t o = 0; o < a.acts[l + 1].size(); ++o) {
            const double t = a.acts[l + 1][o];
            d_out[o] *= 1.0 - t * t;
          }
        }
        double* gw = grads.params.data() + offset[l];
        double* gb = gw + layer.weights.size();
        std::fill(delta[l].begin(), delta[l].end(), 0.0);
        for (int o = 0; o < layer.outputs; ++o) {
          const double d = d_out[o];
          if (d == 0.0) continue;
          kern.axpy(d, a.acts[l].data(), gw + static_cast<std::size_t>(o) * in, in);
          gb[o] += d;
          kern.axpy(d, layer.weights.data() + static_cast<std::size_t>(o) * in, delta[l].data(), in);
        }
      }
      if (want_input) {
        std::size_t at = 0;
        for (int c = 0; c < img.channels; ++c) {
          for (int dy = -r; dy <= r; ++dy) {
            const int yy = std::clamp(y + dy, 0, img.height - 1);
            for (int dx = -r; dx <= r; ++dx) {
              const int xx = std::clamp(x + dx, 0, img.width - 1);
              grads.input[static_cast<std::size_t>(c) * img.voxels() +
                          static_cast<std::size_t>(yy * img.width + xx)] += delta[0][at++];
            }
          }
        }
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Serialization

void write_extractor(std::ostream& out, const ExtractorParams& params) {
  binary::Writer w(out);
  w.u32(static_cast<std::uint32_t>(params.channels));
  w.u32(static_cast<std::uint32_t>(params.radius));
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    w.u32(static_cast<std::uint32_t>(layer.inputs));
    w.u32(static_cast<std::uint32_t>(layer.outputs));
    w.f64s(layer.weights);
    w.f64s(layer.bias);
  }
}

ExtractorParams read_extractor(std::istream& in) {
  binary::Reader r(in);
  ExtractorParams p;
  p.channels = static_cast<int>(r.u32());
  p.radius = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 64) fail(ErrorCode::Format, "extractor record has an invalid layer count");
  for (std::uint32_t l = 0; l < count; ++l) {
    DenseLayer layer;
    layer.inputs = static_cast<int>(r.u32());
    layer.outputs = static_cast<int>(r.u32());
    layer.weights = r.f64s(static_cast<std::size_t>(layer.inputs) * static_cast<std::size_t>(layer.outputs));
    layer.bias = r.f64s(static_cast<std::size_t>(layer.outputs));
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

PatchExtractor::PatchExtractor(ExtractorParams params) : params_(std::move(params)) {
  params_.validate();
}

FeatureMap PatchExtractor::extract(const ModalityImage& img) const {
  return evifuse::extract(img, params_);
}

void PatchExtractor::backward(const ModalityImage& img, std::span<const double> upstream,
                              std::span<double> param_grad) const {
  const auto g = extract_backward(img, params_, upstream, false);
  if (param_grad.size() != g.params.size()) {
    fail(ErrorCode::DimensionMismatch, "parameter gradient buffer has the wrong length");
  }
  for (std::size_t i = 0; i < g.params.size(); ++i) param_grad[i] += g.params[i];
}

void PatchExtractor::save(std::ostream& out) const {
  binary::Writer(out).string(kind());
  write_extractor(out, params_);
}

std::unique_ptr<FeatureExtractor> PatchExtractor::clone() const {
  return std::make_unique<PatchExtractor>(*this);
}

std::unique_ptr<FeatureExtractor> load_extractor(std::istream& in) {
  const std::string kind = binary::Reader(in).string();
  if (kind == "patch-mlp") return std::make_unique<PatchExtractor>(read_extractor(in));
  fail(ErrorCode::Format, "unknown extractor kind '" + kind + "'");
}

}  // namespace evifuse
