#pragma once

// Binary checkpoint container.
//
//   "MTNF" | u32 version | u32 tensor count |
//   per tensor: u32 name length | name | u32 rank | u32 dims[rank] | f32 data
//
// All integers and floats little-endian. Data is row-major over dims.
// Besides the field's parameters the file carries `meta.*` tensors (Fourier
// band count, density blob settings, trained stage), so a field can be rebuilt
// from the file alone. Values are stored as float32: a loaded field holds
// float-rounded parameters, and saving it again reproduces the same bytes.

#include "mtn/field.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mtn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// Raw container IO. Throws ContractError on malformed input.
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

struct Checkpoint {
  MultiScaleField field;
  int stage = kNumLevels;
};

void save_checkpoint(std::ostream& out, const MultiScaleField& field, int stage);
void save_checkpoint(const std::filesystem::path& path, const MultiScaleField& field, int stage);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtn
