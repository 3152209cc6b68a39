#include "fcil/model_io.hpp"

#include <string>

#include "fcil/byte_io.hpp"
#include "fcil/errors.hpp"

namespace fcil::nn {

namespace {

constexpr std::uint32_t kMaxDims = 64;
constexpr std::uint32_t kMaxWidth = 1u << 20;

}  // namespace

std::vector<std::uint8_t> serialize_model(const MlpModel& model) {
  model.validate();
  ByteWriter out;
  out.u32(static_cast<std::uint32_t>(model.layer_dims.size()));
  for (const auto d : model.layer_dims) {
    out.u32(static_cast<std::uint32_t>(d));
  }
  for (const auto& w : model.weights) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        out.f32(static_cast<float>(w(r, c)));
      }
    }
  }
  for (const auto& b : model.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      out.f32(static_cast<float>(b(i)));
    }
  }
  if (model.value_head) {
    out.u32(static_cast<std::uint32_t>(model.value_head->weights.size()));
    for (Eigen::Index i = 0; i < model.value_head->weights.size(); ++i) {
      out.f32(static_cast<float>(model.value_head->weights(i)));
    }
    out.f32(static_cast<float>(model.value_head->bias));
  }
  return std::move(out).take();
}

MlpModel deserialize_model(std::span<const std::uint8_t> blob) {
  ByteReader in(blob);
  const auto count = in.u32();
  if (count < 2 || count > kMaxDims) {
    throw ProtocolError(3, "model blob declares " + std::to_string(count) + " dims");
  }
  MlpModel model;
  std::uint64_t params = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto d = in.u32();
    if (d == 0 || d > kMaxWidth) {
      throw ProtocolError(3, "model blob has invalid dim " + std::to_string(d));
    }
    model.layer_dims.push_back(d);
  }
  for (std::size_t i = 0; i + 1 < model.layer_dims.size(); ++i) {
    params += static_cast<std::uint64_t>(model.layer_dims[i]) * model.layer_dims[i + 1] +
              model.layer_dims[i + 1];
  }
  if (in.remaining() < params * 4) {
    throw ProtocolError(3, "model blob truncated");
  }
  for (std::size_t i = 0; i + 1 < model.layer_dims.size(); ++i) {
    const auto out = static_cast<Eigen::Index>(model.layer_dims[i + 1]);
    const auto inp = static_cast<Eigen::Index>(model.layer_dims[i]);
    Matrix w(out, inp);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < inp; ++c) {
        w(r, c) = in.f32();
      }
    }
    model.weights.push_back(std::move(w));
  }
  for (std::size_t i = 0; i + 1 < model.layer_dims.size(); ++i) {
    Vector b(static_cast<Eigen::Index>(model.layer_dims[i + 1]));
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      b(k) = in.f32();
    }
    model.biases.push_back(std::move(b));
  }
  if (!in.done()) {
    const auto width = in.u32();
    if (width != model.hidden_width()) {
      throw ProtocolError(3, "value head width " + std::to_string(width) +
                                 " does not match last hidden layer");
    }
    ValueHead head;
    head.weights.resize(width);
    for (Eigen::Index k = 0; k < head.weights.size(); ++k) {
      head.weights(k) = in.f32();
    }
    head.bias = in.f32();
    model.value_head = std::move(head);
  }
  if (!in.done()) {
    throw ProtocolError(3, "trailing bytes after model blob");
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw ProtocolError(3, std::string("invalid model blob: ") + e.what());
  }
  return model;
}

MlpModel round_to_f32(const MlpModel& model) {
  MlpModel out = model;
  const auto round = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (auto& w : out.weights) {
    w = w.unaryExpr(round);
  }
  for (auto& b : out.biases) {
    b = b.unaryExpr(round);
  }
  if (out.value_head) {
    out.value_head->weights = out.value_head->weights.unaryExpr(round);
    out.value_head->bias = round(out.value_head->bias);
  }
  return out;
}

}  // namespace fcil::nn
