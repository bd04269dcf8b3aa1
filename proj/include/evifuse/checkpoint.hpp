#pragma once

// Self-describing binary checkpoint of a trained model.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "evifuse/model.hpp"
#include "evifuse/training.hpp"

namespace evifuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::string config_json;  // echo of the resolved experiment config
  std::optional<OptimizerState> optimizer;
  BestRecord best;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evifuse
