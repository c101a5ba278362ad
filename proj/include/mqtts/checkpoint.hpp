#pragma once

// Binary model checkpoints: a four-byte section kind, the full run
// configuration as text, and the parameter tensors in declaration order,
// guarded by a trailing CRC. Files are written to a temporary next to the
// target and renamed into place, and serialization is byte-stable.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mqtts/optimizer.hpp"
#include "mqtts/tensor.hpp"

namespace mqtts {

inline constexpr char kQuantizerKind[] = "QNTZ";
inline constexpr char kSynthesizerKind[] = "SYNT";

struct CheckpointData {
  std::string kind;
  std::string config_text;
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> value;
  };
  std::vector<Entry> tensors;
};

std::uint32_t crc32(std::span<const unsigned char> bytes);

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_text, const ParamStore& params);

CheckpointData load_checkpoint(const std::string& path);

// Copies tensors into an existing store; names, shapes, and count must
// match exactly.
void load_params(ParamStore& store, const CheckpointData& ck);

}  // namespace mqtts
