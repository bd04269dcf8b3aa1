#include "evifuse/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "evifuse/binary_io.hpp"
#include "evifuse/error.hpp"
#include "evifuse/seed.hpp"

namespace evifuse {

namespace {

constexpr std::array<char, 8> kDatasetMagic{'E', 'V', 'F', 'D', 'S', 'E', 'T', '\0'};
constexpr std::uint32_t kMaxGridSide = 1u << 14;
constexpr std::uint32_t kMaxModalities = 64;
constexpr std::uint32_t kMaxChannels = 1024;

}  // namespace

void Dataset::validate() const {
  const int T = modality_count();
  if (T < 1) fail(ErrorCode::InvalidArgument, "dataset needs at least one modality");
  if (static_cast<int>(channels.size()) != T) {
    fail(ErrorCode::DimensionMismatch, "dataset needs one channel count per modality");
  }
  if (width < 1 || height < 1) fail(ErrorCode::InvalidArgument, "dataset grid sizes must be positive");
  for (int c : channels) {
    if (c < 1) fail(ErrorCode::InvalidArgument, "channel counts must be positive");
  }
  for (const auto& ex : examples) {
    ex.validate(T, classes());
    if (ex.labels.width != width || ex.labels.height != height) {
      fail(ErrorCode::DimensionMismatch, "example grid differs from the dataset grid");
    }
    for (int t = 0; t < T; ++t) {
      const auto& img = ex.images[static_cast<std::size_t>(t)];
      if (img.channels != channels[static_cast<std::size_t>(t)] ||
          img.data.size() != img.voxels() * static_cast<std::size_t>(img.channels)) {
        fail(ErrorCode::DimensionMismatch, "modality image channel layout differs from the header");
      }
    }
  }
}

std::vector<LabeledExample> Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin > examples.size() || count > examples.size() - begin) {
    fail(ErrorCode::InvalidArgument, "requested " + std::to_string(count) + " examples from index " +
                                         std::to_string(begin) + " but the dataset holds " +
                                         std::to_string(examples.size()));
  }
  return {examples.begin() + static_cast<std::ptrdiff_t>(begin),
          examples.begin() + static_cast<std::ptrdiff_t>(begin + count)};
}

void write_dataset(std::ostream& out, const Dataset& data) {
  data.validate();
  binary::Writer w(out);
  w.raw(kDatasetMagic.data(), kDatasetMagic.size());
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.modality_count()));
  w.u32(static_cast<std::uint32_t>(data.classes()));
  for (int c : data.channels) w.u32(static_cast<std::uint32_t>(c));
  w.u64(data.examples.size());
  w.u32(static_cast<std::uint32_t>(data.width));
  w.u32(static_cast<std::uint32_t>(data.height));
  for (const auto& label : data.frame.labels()) w.string(label);
  for (const auto& name : data.modalities) w.string(name);
  for (const auto& ex : data.examples) {
    for (const auto& img : ex.images) w.f64s(img.data);
    for (auto v : ex.labels.labels) w.u16(v);
  }
}

Dataset read_dataset(std::istream& in) {
  binary::Reader r(in);
  std::array<char, 8> magic{};
  try {
    r.raw(magic.data(), magic.size());
  } catch (const Error&) {
    fail(ErrorCode::Format, "not a dataset container");
  }
  if (magic != kDatasetMagic) fail(ErrorCode::Format, "not a dataset container");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    fail(ErrorCode::Version, "unsupported dataset version " + std::to_string(version) + " (expected " +
                                 std::to_string(kDatasetVersion) + ")");
  }
  const std::uint32_t T = r.u32();
  const std::uint32_t K = r.u32();
  if (T < 1 || T > kMaxModalities) fail(ErrorCode::Format, "dataset header has an invalid modality count");
  if (K < 2 || K > 32) fail(ErrorCode::Format, "dataset header has an invalid class count");
  std::vector<int> channels;
  for (std::uint32_t t = 0; t < T; ++t) {
    const std::uint32_t c = r.u32();
    if (c < 1 || c > kMaxChannels) fail(ErrorCode::Format, "dataset header has an invalid channel count");
    channels.push_back(static_cast<int>(c));
  }
  const std::uint64_t count = r.u64();
  const std::uint32_t width = r.u32();
  const std::uint32_t height = r.u32();
  if (width < 1 || height < 1 || width > kMaxGridSide || height > kMaxGridSide) {
    fail(ErrorCode::Format, "dataset header has invalid grid dimensions");
  }
  std::vector<std::string> labels;
  for (std::uint32_t k = 0; k < K; ++k) labels.push_back(r.string());
  std::vector<std::string> names;
  for (std::uint32_t t = 0; t < T; ++t) names.push_back(r.string());

  Dataset data{Frame(std::move(labels)), std::move(names), channels, static_cast<int>(width),
               static_cast<int>(height), {}};
  const std::size_t voxels = static_cast<std::size_t>(width) * height;
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledExample ex;
    for (std::uint32_t t = 0; t < T; ++t) {
      ModalityImage img(data.width, data.height, channels[t]);
      img.data = r.f64s(voxels * static_cast<std::size_t>(channels[t]));
      ex.images.push_back(std::move(img));
    }
    ex.labels = LabelGrid(data.width, data.height);
    for (auto& v : ex.labels.labels) {
      v = r.u16();
      if (v >= K) {
        fail(ErrorCode::Format, "example " + std::to_string(i) + " has label " + std::to_string(v) +
                                    " outside the " + std::to_string(K) + "-class frame");
      }
    }
    data.examples.push_back(std::move(ex));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorCode::Format, "trailing bytes after the declared payload");
  }
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  write_dataset(out, data);
  if (!out.flush()) fail(ErrorCode::Io, "failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::string to_string(Layout layout) {
  return layout == Layout::Blobs ? "blobs" : "stripes";
}

Layout layout_from_string(const std::string& name) {
  if (name == "blobs") return Layout::Blobs;
  if (name == "stripes") return Layout::Stripes;
  fail(ErrorCode::Config, "unknown layout '" + name + "' (expected blobs or stripes)");
}

std::vector<double> SyntheticSpec::prior() const {
  if (!class_prior.empty()) return class_prior;
  return std::vector<double>(static_cast<std::size_t>(std::max(classes, 1)), 1.0 / std::max(classes, 1));
}

Frame SyntheticSpec::frame() const {
  return labels.empty() ? Frame::indexed(classes) : Frame(labels);
}

std::vector<std::string> SyntheticSpec::problems() const {
  std::vector<std::string> out;
  if (width < 1 || height < 1) out.push_back("synthetic.width and synthetic.height must be >= 1");
  if (classes < 2 || classes > 32) out.push_back("synthetic.classes must be in [2, 32]");
  if (modalities.empty()) out.push_back("synthetic.modalities must name at least one modality");
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    if (modalities[i].empty()) out.push_back("synthetic.modalities[" + std::to_string(i) + "] is empty");
    for (std::size_t j = 0; j < i; ++j) {
      if (modalities[i] == modalities[j]) out.push_back("duplicate modality name '" + modalities[i] + "'");
    }
  }
  if (!labels.empty() && static_cast<int>(labels.size()) != classes) {
    out.push_back("synthetic.labels has " + std::to_string(labels.size()) + " entries, expected " +
                  std::to_string(classes));
  }
  const auto expected = modalities.size() * static_cast<std::size_t>(std::max(classes, 0));
  if (fidelity.size() != expected) {
    out.push_back("synthetic.fidelity has " + std::to_string(fidelity.size()) + " entries, expected " +
                  std::to_string(expected) + " (modalities x classes)");
  }
  for (std::size_t i = 0; i < fidelity.size(); ++i) {
    if (!(fidelity[i] >= 0.5 && fidelity[i] <= 1.0)) {
      out.push_back("synthetic.fidelity[" + std::to_string(i) + "] must be in [0.5, 1]");
    }
  }
  if (!class_prior.empty()) {
    double total = 0.0;
    bool bad = static_cast<int>(class_prior.size()) != classes;
    for (double p : class_prior) {
      bad = bad || !(p >= 0.0);
      total += p;
    }
    if (bad || std::abs(total - 1.0) > 1e-9) {
      out.push_back("synthetic.class_prior must hold one nonnegative entry per class summing to 1");
    }
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) out.push_back("synthetic.noise must be >= 0");
  if (regions < 1) out.push_back("synthetic.regions must be >= 1");
  return out;
}

void SyntheticSpec::validate() const {
  const auto list = problems();
  if (list.empty()) return;
  std::string msg = "invalid synthetic spec:";
  for (const auto& p : list) msg += " " + p + ";";
  fail(ErrorCode::Config, msg);
}

double class_intensity(int k, int classes) {
  return static_cast<double>(k) / static_cast<double>(classes - 1);
}

double confusable_intensity(int k, int classes) {
  return class_intensity(k == 0 ? 1 : 0, classes);
}

namespace {

LabelGrid draw_layout(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const auto prior = spec.prior();
  std::discrete_distribution<int> pick_class(prior.begin(), prior.end());
  std::vector<std::uint16_t> region_class(static_cast<std::size_t>(spec.regions));
  for (auto& c : region_class) c = static_cast<std::uint16_t>(pick_class(rng));
  LabelGrid grid(spec.width, spec.height);
  if (spec.layout == Layout::Blobs) {
    std::uniform_real_distribution<double> ux(0.0, spec.width);
    std::uniform_real_distribution<double> uy(0.0, spec.height);
    std::vector<std::pair<double, double>> seeds(region_class.size());
    for (auto& s : seeds) {
      s.first = ux(rng);
      s.second = uy(rng);
    }
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t owner = 0;
        for (std::size_t r = 0; r < seeds.size(); ++r) {
          const double dx = x + 0.5 - seeds[r].first;
          const double dy = y + 0.5 - seeds[r].second;
          const double d = dx * dx + dy * dy;
          if (d < best) {
            best = d;
            owner = r;
          }
        }
        grid.labels[static_cast<std::size_t>(y * spec.width + x)] = region_class[owner];
      }
    }
  } else {
    const bool vertical = std::bernoulli_distribution(0.5)(rng);
    const int extent = vertical ? spec.width : spec.height;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const int pos = vertical ? x : y;
        const auto band = static_cast<std::size_t>(pos * spec.regions / extent);
        grid.labels[static_cast<std::size_t>(y * spec.width + x)] = region_class[band];
      }
    }
  }
  return grid;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec, std::size_t count) {
  spec.validate();
  const int T = spec.modality_count();
  const int K = spec.classes;
  Dataset data{spec.frame(), spec.modalities, std::vector<int>(static_cast<std::size_t>(T), 1),
               spec.width, spec.height, {}};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, i));
    LabeledExample ex;
    ex.labels = draw_layout(spec, rng);
    for (int t = 0; t < T; ++t) {
      ModalityImage img(spec.width, spec.height, 1);
      for (std::size_t n = 0; n < img.voxels(); ++n) {
        const int k = ex.labels.labels[n];
        const bool faithful = unit(rng) < spec.q(t, k);
        const double level = faithful ? class_intensity(k, K) : confusable_intensity(k, K);
        img.data[n] = level + spec.noise * normal(rng);
      }
      ex.images.push_back(std::move(img));
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace evifuse
