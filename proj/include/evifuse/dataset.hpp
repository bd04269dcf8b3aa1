#pragma once

// Multimodal dataset container (binary, little-endian) and the synthetic
// generator with planted per-class modality fidelities.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evifuse/dst.hpp"
#include "evifuse/model.hpp"

namespace evifuse {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  Frame frame;
  std::vector<std::string> modalities;
  std::vector<int> channels;  // per modality
  int width = 0;
  int height = 0;
  std::vector<LabeledExample> examples;

  int classes() const noexcept { return frame.size(); }
  int modality_count() const noexcept { return static_cast<int>(modalities.size()); }
  void validate() const;
  /// Examples [begin, begin + count).
  std::vector<LabeledExample> slice(std::size_t begin, std::size_t count) const;
};

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

enum class Layout { Blobs, Stripes };

std::string to_string(Layout layout);
Layout layout_from_string(const std::string& name);

struct SyntheticSpec {
  int width = 32;
  int height = 32;
  int classes = 3;
  std::vector<std::string> modalities{"A", "B"};
  std::vector<std::string> labels;  // empty: theta1..thetaK
  /// T x K, probability that modality t shows the true class's intensity.
  std::vector<double> fidelity{1.0, 1.0, 0.5, 1.0, 0.5, 1.0};
  std::vector<double> class_prior;  // empty: uniform
  double noise = 0.3;
  Layout layout = Layout::Blobs;
  int regions = 8;  // Voronoi cells for blobs, bands for stripes
  std::uint64_t seed = 0;

  int modality_count() const noexcept { return static_cast<int>(modalities.size()); }
  double q(int t, int k) const { return fidelity.at(static_cast<std::size_t>(t * classes + k)); }
  /// Prior with the uniform default filled in.
  std::vector<double> prior() const;
  Frame frame() const;

  std::vector<std::string> problems() const;
  void validate() const;
};

/// Intensity rendered for class k; every modality uses the same levels.
double class_intensity(int k, int classes);
/// Intensity substituted for class k when a modality misses it.
double confusable_intensity(int k, int classes);

Dataset generate(const SyntheticSpec& spec, std::size_t count);

}  // namespace evifuse
