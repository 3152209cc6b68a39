#include "fcil/wire.hpp"

#include <algorithm>

#include "fcil/byte_io.hpp"
#include "fcil/errors.hpp"
#include "fcil/model_io.hpp"

namespace fcil::wire {

FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw ProtocolError(error_code::kMalformed, "short frame header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw ProtocolError(error_code::kMalformed, "bad frame magic");
  }
  ByteReader in(bytes.subspan(4, kHeaderSize - 4));
  FrameHeader h;
  h.version = in.u8();
  h.type = in.u8();
  h.length = in.u64();
  if (h.version != kVersion) {
    throw ProtocolError(error_code::kVersionMismatch,
                        "unsupported protocol version " + std::to_string(h.version));
  }
  if (h.length > kMaxPayload) {
    throw ProtocolError(error_code::kMalformed, "frame payload too large");
  }
  return h;
}

std::vector<std::uint8_t> encode_frame(MsgType type, std::span<const std::uint8_t> payload,
                                       std::uint8_t version) {
  ByteWriter out;
  out.raw(kMagic);
  out.u8(version);
  out.u8(static_cast<std::uint8_t>(type));
  out.u64(payload.size());
  out.raw(payload);
  return std::move(out).take();
}

bool is_known_type(std::uint8_t type) { return type >= 1 && type <= 6; }

namespace {

void expect_done(const ByteReader& in, const char* what) {
  if (!in.done()) {
    throw ProtocolError(error_code::kMalformed, std::string("trailing bytes in ") + what);
  }
}

}  // namespace

std::vector<std::uint8_t> encode(const Hello& msg) {
  ByteWriter out;
  out.u64(msg.client_id);
  out.u32(msg.feature_width);
  out.u32(msg.num_classes);
  return std::move(out).take();
}

std::vector<std::uint8_t> encode(const GlobalModel& msg) {
  ByteWriter out;
  out.u32(msg.round);
  out.raw(nn::serialize_model(msg.model));
  return std::move(out).take();
}

std::vector<std::uint8_t> encode(const ClientUpdateMsg& msg) {
  ByteWriter out;
  out.u32(msg.round);
  out.u64(msg.sample_count);
  out.raw(nn::serialize_model(msg.model));
  return std::move(out).take();
}

std::vector<std::uint8_t> encode(const RoundClose& msg) {
  ByteWriter out;
  out.u32(msg.round);
  return std::move(out).take();
}

std::vector<std::uint8_t> encode_shutdown() { return {}; }

std::vector<std::uint8_t> encode(const ErrorMsg& msg) {
  ByteWriter out;
  out.u16(msg.code);
  out.raw(msg.message);
  return std::move(out).take();
}

Hello decode_hello(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  Hello msg;
  msg.client_id = in.u64();
  msg.feature_width = in.u32();
  msg.num_classes = in.u32();
  expect_done(in, "HELLO");
  return msg;
}

GlobalModel decode_global_model(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  GlobalModel msg;
  msg.round = in.u32();
  msg.model = nn::deserialize_model(in.rest());
  return msg;
}

ClientUpdateMsg decode_client_update(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  ClientUpdateMsg msg;
  msg.round = in.u32();
  msg.sample_count = in.u64();
  msg.model = nn::deserialize_model(in.rest());
  return msg;
}

RoundClose decode_round_close(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  RoundClose msg;
  msg.round = in.u32();
  expect_done(in, "ROUND_CLOSE");
  return msg;
}

ErrorMsg decode_error(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  ErrorMsg msg;
  msg.code = in.u16();
  const auto text = in.rest();
  msg.message.assign(text.begin(), text.end());
  return msg;
}

}  // namespace fcil::wire
