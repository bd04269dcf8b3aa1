#include "evifuse/checkpoint.hpp"

#include <array>
#include <fstream>

#include "evifuse/binary_io.hpp"
#include "evifuse/error.hpp"

namespace evifuse {

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'E', 'V', 'F', 'C', 'K', 'P', 'T', '\0'};

void write_enn(binary::Writer& w, const EnnParameters& p) {
  w.u32(static_cast<std::uint32_t>(p.prototypes_count));
  w.u32(static_cast<std::uint32_t>(p.feature_dim));
  w.u32(static_cast<std::uint32_t>(p.classes));
  w.f64s(p.prototypes);
  w.f64s(p.alpha);
  w.f64s(p.gamma);
  w.f64s(p.memberships);
}

EnnParameters read_enn(binary::Reader& r) {
  EnnParameters p;
  p.prototypes_count = static_cast<int>(r.u32());
  p.feature_dim = static_cast<int>(r.u32());
  p.classes = static_cast<int>(r.u32());
  if (p.prototypes_count < 1 || p.feature_dim < 1 || p.classes < 2 || p.prototypes_count > 1 << 16 ||
      p.feature_dim > 1 << 16 || p.classes > 32) {
    fail(ErrorCode::Format, "checkpoint evidence layer has invalid dimensions");
  }
  const auto I = static_cast<std::size_t>(p.prototypes_count);
  p.prototypes = r.f64s(I * static_cast<std::size_t>(p.feature_dim));
  p.alpha = r.f64s(I);
  p.gamma = r.f64s(I);
  p.memberships = r.f64s(I * static_cast<std::size_t>(p.classes));
  return p;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  binary::Writer w(out);
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.string(ckpt.config_json);
  w.u32(static_cast<std::uint32_t>(m.modalities()));
  w.u32(static_cast<std::uint32_t>(m.classes()));
  for (const auto& label : m.frame().labels()) w.string(label);
  for (const auto& name : m.reliability().modalities()) w.string(name);
  for (int t = 0; t < m.modalities(); ++t) m.extractor(t).save(out);
  for (int t = 0; t < m.modalities(); ++t) write_enn(w, m.enn(t));
  w.f64s(m.reliability().raw());
  w.u32(ckpt.optimizer ? 1u : 0u);
  if (ckpt.optimizer) {
    w.u64(ckpt.optimizer->step);
    w.u64(ckpt.optimizer->first.size());
    w.f64s(ckpt.optimizer->first);
    w.f64s(ckpt.optimizer->second);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.best.epoch));
  w.u32(static_cast<std::uint32_t>(ckpt.best.stage));
  w.f64(ckpt.best.val_dice_fused);
}

Checkpoint read_checkpoint(std::istream& in) {
  binary::Reader r(in);
  std::array<char, 8> magic{};
  try {
    r.raw(magic.data(), magic.size());
  } catch (const Error&) {
    fail(ErrorCode::Format, "not a checkpoint");
  }
  if (magic != kCheckpointMagic) fail(ErrorCode::Format, "not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::Version, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  std::string config = r.string();
  const std::uint32_t T = r.u32();
  const std::uint32_t K = r.u32();
  if (T < 1 || T > 64) fail(ErrorCode::Format, "checkpoint has an invalid modality count");
  if (K < 2 || K > 32) fail(ErrorCode::Format, "checkpoint has an invalid class count");
  std::vector<std::string> labels;
  for (std::uint32_t k = 0; k < K; ++k) labels.push_back(r.string());
  std::vector<std::string> names;
  for (std::uint32_t t = 0; t < T; ++t) names.push_back(r.string());
  std::vector<std::unique_ptr<FeatureExtractor>> extractors;
  for (std::uint32_t t = 0; t < T; ++t) extractors.push_back(load_extractor(in));
  std::vector<EnnParameters> enns;
  for (std::uint32_t t = 0; t < T; ++t) enns.push_back(read_enn(r));
  Frame frame(std::move(labels));
  ReliabilityMatrix reliability(frame, std::move(names), r.f64s(static_cast<std::size_t>(T) * K));
  std::optional<OptimizerState> optimizer;
  if (r.u32() != 0) {
    OptimizerState state;
    state.step = r.u64();
    const std::uint64_t size = r.u64();
    state.first = r.f64s(size);
    state.second = r.f64s(size);
    optimizer = std::move(state);
  }
  BestRecord best;
  best.epoch = static_cast<int>(r.u32());
  best.stage = static_cast<int>(r.u32());
  best.val_dice_fused = r.f64();
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorCode::Format, "trailing bytes after the checkpoint payload");
  }
  return Checkpoint{Model(std::move(frame), std::move(extractors), std::move(enns), std::move(reliability)),
                    std::move(config), std::move(optimizer), best};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
  if (!out.flush()) fail(ErrorCode::Io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace evifuse
