#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcil/nn.hpp"

namespace fcil::wire {

/// Frame: "FCIL" magic, u8 version, u8 msg_type, u64 LE payload length, payload.
inline constexpr std::array<std::uint8_t, 4> kMagic = {0x46, 0x43, 0x49, 0x4C};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 14;
inline constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 32;

enum class MsgType : std::uint8_t {
  kHello = 1,
  kGlobalModel = 2,
  kClientUpdate = 3,
  kRoundClose = 4,
  kShutdown = 5,
  kError = 6,
};

/// Codes carried by ERROR frames.
namespace error_code {
inline constexpr std::uint16_t kUnknownType = 1;
inline constexpr std::uint16_t kVersionMismatch = 2;
inline constexpr std::uint16_t kMalformed = 3;
inline constexpr std::uint16_t kRejected = 4;
inline constexpr std::uint16_t kUnexpected = 5;
}  // namespace error_code

struct FrameHeader {
  std::uint8_t version = kVersion;
  std::uint8_t type = 0;
  std::uint64_t length = 0;
};

/// Throws ProtocolError: bad magic / oversize length -> malformed, other version -> version mismatch.
/// Unknown types are not rejected here so the caller can answer with ERROR 1.
FrameHeader decode_header(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_frame(MsgType type, std::span<const std::uint8_t> payload,
                                       std::uint8_t version = kVersion);
bool is_known_type(std::uint8_t type);

struct Hello {
  std::uint64_t client_id = 0;
  std::uint32_t feature_width = 0;
  std::uint32_t num_classes = 0;
};

struct GlobalModel {
  std::uint32_t round = 0;
  nn::MlpModel model;
};

struct ClientUpdateMsg {
  std::uint32_t round = 0;
  std::uint64_t sample_count = 0;
  nn::MlpModel model;
};

struct RoundClose {
  std::uint32_t round = 0;
};

struct ErrorMsg {
  std::uint16_t code = 0;
  std::string message;
};

std::vector<std::uint8_t> encode(const Hello& msg);
std::vector<std::uint8_t> encode(const GlobalModel& msg);
std::vector<std::uint8_t> encode(const ClientUpdateMsg& msg);
std::vector<std::uint8_t> encode(const RoundClose& msg);
std::vector<std::uint8_t> encode_shutdown();
std::vector<std::uint8_t> encode(const ErrorMsg& msg);

/// Payload decoders; throw ProtocolError(malformed) on short or trailing bytes.
Hello decode_hello(std::span<const std::uint8_t> payload);
GlobalModel decode_global_model(std::span<const std::uint8_t> payload);
ClientUpdateMsg decode_client_update(std::span<const std::uint8_t> payload);
RoundClose decode_round_close(std::span<const std::uint8_t> payload);
ErrorMsg decode_error(std::span<const std::uint8_t> payload);

}  // namespace fcil::wire
