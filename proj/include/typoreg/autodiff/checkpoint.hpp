#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "typoreg/autodiff/adamw.hpp"
#include "typoreg/autodiff/tensor.hpp"

namespace typoreg::ad {

// Binary layout, little-endian:
//   "LALC" | u16 version | records...
//   record: u16 name length | name bytes | u8 rank | u32 extent * rank | f32 * numel
inline constexpr char kCheckpointMagic[4] = {'L', 'A', 'L', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);

void save_params(const std::filesystem::path& path, const std::vector<NamedParam>& params);

/// Copies stored values into `params`, matched by name. Shapes must agree and
/// every parameter must be present.
void load_params(const std::filesystem::path& path, const std::vector<NamedParam>& params);

}  // namespace typoreg::ad
