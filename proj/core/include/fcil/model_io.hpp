#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fcil/nn.hpp"

namespace fcil::nn {

/// Model blob: u32 dim count, each dim as u32, all weight matrices row-major,
/// then all biases, every value as f32; little-endian throughout.
/// A model with a value head appends u32 head width, the head weights and the head bias.
std::vector<std::uint8_t> serialize_model(const MlpModel& model);

/// Inverse of serialize_model. Throws ProtocolError on truncated or inconsistent blobs.
MlpModel deserialize_model(std::span<const std::uint8_t> blob);

/// Rounds every parameter through f32, the precision models have on the wire.
MlpModel round_to_f32(const MlpModel& model);

}  // namespace fcil::nn
