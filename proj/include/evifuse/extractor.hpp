#pragma once

// Per-modality feature extraction. `FeatureExtractor` is the contract the
// evidence-mapping stage depends on; `PatchExtractor` is the small reference
// network: a (2r+1)x(2r+1) patch around each voxel (edges replicated) goes
// through affine layers with tanh between them.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evifuse {

struct ModalityImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;  // channel planes, each height x width row-major

  ModalityImage() = default;
  ModalityImage(int width, int height, int channels);

  std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * voxels() + static_cast<std::size_t>(y * width + x)];
  }
  double& at(int c, int y, int x) {
    return data[static_cast<std::size_t>(c) * voxels() + static_cast<std::size_t>(y * width + x)];
  }

  friend bool operator==(const ModalityImage&, const ModalityImage&) = default;
};

/// H features per voxel, stored voxel-major (`values[n * H + h]`).
struct FeatureMap {
  int width = 0;
  int height = 0;
  int features = 0;
  std::vector<double> values;

  std::span<const double> voxel(std::size_t n) const {
    return std::span<const double>(values).subspan(n * static_cast<std::size_t>(features),
                                                   static_cast<std::size_t>(features));
  }
};

struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<double> weights;  // outputs x inputs
  std::vector<double> bias;     // outputs

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ExtractorParams {
  int channels = 0;
  int radius = 0;
  std::vector<DenseLayer> layers;

  int patch_size() const noexcept { return channels * (2 * radius + 1) * (2 * radius + 1); }
  int feature_count() const noexcept { return layers.empty() ? 0 : layers.back().outputs; }
  std::size_t parameter_count() const noexcept;

  /// Layer by layer: weights then bias.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  void validate() const;

  friend bool operator==(const ExtractorParams&, const ExtractorParams&) = default;
};

inline constexpr int kDefaultRadius = 1;
inline constexpr int kDefaultHidden = 16;
inline constexpr int kDefaultFeatures = 2;

/// Two layers, weights ~ N(0, 1/fan_in), zero biases.
ExtractorParams init_extractor(int channels, int features, int radius, int hidden,
                               std::uint64_t seed);

FeatureMap extract(const ModalityImage& img, const ExtractorParams& params);

struct ExtractorGradients {
  std::vector<double> params;  // same layout as ExtractorParams::flatten()
  std::vector<double> input;   // same layout as ModalityImage::data; empty unless requested
};

/// `upstream` is dL/dfeatures, voxel-major N x H.
ExtractorGradients extract_backward(const ModalityImage& img, const ExtractorParams& params,
                                    std::span<const double> upstream, bool want_input = false);

void write_extractor(std::ostream& out, const ExtractorParams& params);
ExtractorParams read_extractor(std::istream& in);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::string kind() const = 0;
  virtual int channels() const = 0;
  virtual int feature_count() const = 0;

  virtual FeatureMap extract(const ModalityImage& img) const = 0;
  /// Adds dL/dparams into `param_grad`.
  virtual void backward(const ModalityImage& img, std::span<const double> upstream,
                        std::span<double> param_grad) const = 0;

  virtual std::size_t parameter_count() const = 0;
  virtual std::vector<double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> flat) = 0;

  virtual void save(std::ostream& out) const = 0;
  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;
};

class PatchExtractor final : public FeatureExtractor {
 public:
  explicit PatchExtractor(ExtractorParams params);

  std::string kind() const override { return "patch-mlp"; }
  int channels() const override { return params_.channels; }
  int feature_count() const override { return params_.feature_count(); }

  FeatureMap extract(const ModalityImage& img) const override;
  void backward(const ModalityImage& img, std::span<const double> upstream,
                std::span<double> param_grad) const override;

  std::size_t parameter_count() const override { return params_.parameter_count(); }
  std::vector<double> parameters() const override { return params_.flatten(); }
  void set_parameters(std::span<const double> flat) override { params_.unflatten(flat); }

  void save(std::ostream& out) const override;
  std::unique_ptr<FeatureExtractor> clone() const override;

  const ExtractorParams& params() const noexcept { return params_; }

 private:
  ExtractorParams params_;
};

/// Reads an extractor written by FeatureExtractor::save.
std::unique_ptr<FeatureExtractor> load_extractor(std::istream& in);

}  // namespace evifuse
