#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heterolora/transformer.hpp"

namespace heterolora {

// Checkpoint container: a magic line, a length-prefixed JSON header (model
// config, seed, adapter metadata, tensor manifest), then the raw float64
// little-endian payload of every tensor in manifest order. Round trips are
// bit-exact.
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace heterolora
