#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fdnflow/conv.hpp"
#include "fdnflow/rng.hpp"
#include "fdnflow/tensor.hpp"

namespace fdnflow {

// Depth-4 U-Net style encoder-decoder with addition skips, a 1x1 projection
// and a five-layer flow regression head.
struct FdnConfig {
  int depth = 4;
  std::vector<int> encoder_channels{2, 32, 64, 128, 256};
  std::vector<int> decoder_channels{256, 128, 64, 32, 32};
  int projection_out = 64;
  std::vector<int> flow_head_channels{64, 128, 256, 128, 64, 2};

  static FdnConfig for_depth(int d) {
    if (d < 1) throw std::invalid_argument("depth must be >= 1");
    FdnConfig c;
    c.depth = d;
    c.encoder_channels = {2};
    int ch = 32;
    for (int i = 0; i < d; ++i, ch *= 2) c.encoder_channels.push_back(ch);
    c.decoder_channels.clear();
    for (int i = 0; i < d; ++i) c.decoder_channels.push_back(c.encoder_channels[d - i]);
    c.decoder_channels.push_back(c.encoder_channels[1]);
    return c;
  }

  void validate() const {
    if (depth < 1) throw std::invalid_argument("FdnConfig: depth must be >= 1");
    if (encoder_channels.size() != static_cast<std::size_t>(depth) + 1 ||
        decoder_channels.size() != static_cast<std::size_t>(depth) + 1)
      throw std::invalid_argument("FdnConfig: channel lists must have depth+1 entries");
    for (int i = 0; i < depth; ++i)
      if (decoder_channels[i] != encoder_channels[depth - i])
        throw std::invalid_argument("FdnConfig: decoder must mirror encoder");
    for (int c : encoder_channels)
      if (c <= 0) throw std::invalid_argument("FdnConfig: channels must be positive");
    for (int c : decoder_channels)
      if (c <= 0) throw std::invalid_argument("FdnConfig: channels must be positive");
    for (std::size_t i = 0; i + 1 < decoder_channels.size() - 1; ++i)
      if (decoder_channels[i] % 2 != 0)
        throw std::invalid_argument("FdnConfig: decoder halving needs even channels");
    if (projection_out <= 0 || flow_head_channels.size() < 2)
      throw std::invalid_argument("FdnConfig: bad head configuration");
    if (flow_head_channels.front() != projection_out)
      throw std::invalid_argument("FdnConfig: head input must match projection");
    if (flow_head_channels.back() != 2)
      throw std::invalid_argument("FdnConfig: head must end in 2 channels");
  }
};

struct ConvParam {
  Tensor weight;
  Tensor bias;
};

struct BnParam {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

struct EncoderBlock {
  ConvParam conv1, conv2;
  BnParam bn1, bn2;
};

struct DecoderBlock {
  ConvParam up;  // 2x2 transposed conv
  ConvParam conv1, conv2;
  BnParam bn1, bn2;
};

struct ModelParameters {
  FdnConfig config;
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  ConvParam projection;
  std::vector<ConvParam> flow_head;

  // Stable, seed-reproducible iteration order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto conv = [&](const std::string& name, const ConvParam& c) {
      out.emplace_back(name + ".weight", c.weight);
      out.emplace_back(name + ".bias", c.bias);
    };
    auto bn = [&](const std::string& name, const BnParam& b) {
      out.emplace_back(name + ".gamma", b.gamma);
      out.emplace_back(name + ".beta", b.beta);
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      conv(p + ".conv1", encoder[i].conv1);
      bn(p + ".bn1", encoder[i].bn1);
      conv(p + ".conv2", encoder[i].conv2);
      bn(p + ".bn2", encoder[i].bn2);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      conv(p + ".up", decoder[i].up);
      conv(p + ".conv1", decoder[i].conv1);
      bn(p + ".bn1", decoder[i].bn1);
      conv(p + ".conv2", decoder[i].conv2);
      bn(p + ".bn2", decoder[i].bn2);
    }
    conv("projection", projection);
    for (std::size_t i = 0; i < flow_head.size(); ++i)
      conv("flow_head." + std::to_string(i), flow_head[i]);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& t : parameters()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (Tensor& t : parameters()) t.zero_grad();
  }
};

namespace detail {

inline Tensor init_conv_weight(Shape shape, int fan_in, std::mt19937_64& gen) {
  const double bound = std::sqrt(6.0 / fan_in);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& x : t.data()) x = uniform(gen, -bound, bound);
  return t;
}

inline ConvParam init_conv(int cout, int cin, int k, std::mt19937_64& gen) {
  return {init_conv_weight({cout, cin, k, k}, cin * k * k, gen),
          Tensor::zeros({cout}, true)};
}

inline ConvParam init_deconv(int cin, int cout, std::mt19937_64& gen) {
  if (cin % 2 != 0)
    throw std::invalid_argument("transposed conv needs an even channel count");
  return {init_conv_weight({cin, cout, 2, 2}, cin * 4, gen),
          Tensor::zeros({cout}, true)};
}

inline BnParam init_bn(int c) {
  return {Tensor::full({c}, 1.0, true), Tensor::zeros({c}, true),
          BatchNormState::init(c)};
}

}  // namespace detail

inline ModelParameters init_model(const FdnConfig& config, unsigned long seed) {
  config.validate();
  std::mt19937_64 gen(seed);
  ModelParameters m;
  m.config = config;
  for (int i = 0; i < config.depth; ++i) {
    const int cin = config.encoder_channels[i];
    const int cout = config.encoder_channels[i + 1];
    EncoderBlock b;
    b.conv1 = detail::init_conv(cout, cin, 3, gen);
    b.bn1 = detail::init_bn(cout);
    b.conv2 = detail::init_conv(cout, cout, 3, gen);
    b.bn2 = detail::init_bn(cout);
    m.encoder.push_back(std::move(b));
  }
  for (int i = 0; i < config.depth; ++i) {
    const int cin = config.decoder_channels[i];
    const int cout = config.decoder_channels[i + 1];
    DecoderBlock b;
    b.up = detail::init_deconv(cin, cout, gen);
    b.conv1 = detail::init_conv(cout, cout, 3, gen);
    b.bn1 = detail::init_bn(cout);
    b.conv2 = detail::init_conv(cout, cout, 3, gen);
    b.bn2 = detail::init_bn(cout);
    m.decoder.push_back(std::move(b));
  }
  m.projection = detail::init_conv(config.projection_out,
                                   config.encoder_channels[1], 1, gen);
  for (std::size_t i = 0; i + 1 < config.flow_head_channels.size(); ++i)
    m.flow_head.push_back(detail::init_conv(config.flow_head_channels[i + 1],
                                            config.flow_head_channels[i], 3, gen));
  return m;
}

struct CropInfo {
  int height;
  int width;
};

// Pad bottom/right with zeros to the nearest multiple of 2^d.
inline std::pair<Tensor, CropInfo> pad_to_grid(const Tensor& input, int depth) {
  detail::check_4d(input, "pad_to_grid");
  const int H = input.shape()[2], W = input.shape()[3];
  const int grid = 1 << depth;
  const int Hp = ((H + grid - 1) / grid) * grid;
  const int Wp = ((W + grid - 1) / grid) * grid;
  return {pad_bottom_right(input, Hp - H, Wp - W), CropInfo{H, W}};
}

namespace detail {

inline Tensor encoder_conv_pair(const Tensor& x, EncoderBlock& b, bool training) {
  Tensor h = relu(batchnorm2d(conv2d(x, b.conv1.weight, b.conv1.bias, 1, 1),
                              b.bn1.gamma, b.bn1.beta, b.bn1.state, training));
  return relu(batchnorm2d(conv2d(h, b.conv2.weight, b.conv2.bias, 1, 1),
                          b.bn2.gamma, b.bn2.beta, b.bn2.state, training));
}

inline Tensor decoder_conv_pair(const Tensor& x, DecoderBlock& b, bool training) {
  Tensor h = relu(batchnorm2d(conv2d(x, b.conv1.weight, b.conv1.bias, 1, 1),
                              b.bn1.gamma, b.bn1.beta, b.bn1.state, training));
  return relu(batchnorm2d(conv2d(h, b.conv2.weight, b.conv2.bias, 1, 1),
                          b.bn2.gamma, b.bn2.beta, b.bn2.state, training));
}

}  // namespace detail

// Encoder-decoder trunk: frame pair -> 32-channel feature map at the input
// spatial size. Skips fuse the pre-pool encoder activation of equal channel
// count into the upsampled decoder feature by bilinear resize + addition;
// the input level and the final 32->32 stage carry no skip.
inline Tensor fdn_forward(const Tensor& pair, ModelParameters& model,
                          bool training = true) {
  detail::check_4d(pair, "fdn_forward");
  if (pair.shape()[1] != model.config.encoder_channels[0])
    throw std::invalid_argument("fdn_forward: unexpected input channel count");
  const int d = model.config.depth;
  auto [x, crop] = pad_to_grid(pair, d);

  std::vector<Tensor> pre_pool;
  for (int i = 0; i < d; ++i) {
    Tensor h = detail::encoder_conv_pair(x, model.encoder[i], training);
    pre_pool.push_back(h);
    x = maxpool2d(h);
  }
  for (int i = 0; i < d; ++i) {
    DecoderBlock& b = model.decoder[i];
    Tensor h = conv_transpose2d(x, b.up.weight, b.up.bias);
    const int skip_idx = d - 2 - i;  // encoder level with equal channel count
    if (skip_idx >= 0) {
      Tensor s = bilinear_resize(pre_pool[skip_idx], h.shape()[2], h.shape()[3]);
      h = add(h, s);
    }
    x = detail::decoder_conv_pair(h, b, training);
  }
  return crop_top_left(x, crop.height, crop.width);
}

// Full pipeline: FDN trunk, 1x1 projection, then the flow head with ReLU
// after every layer except the last. Channel 0 is u (horizontal, positive
// right), channel 1 is v (vertical, positive down).
inline Tensor predict_flow(const Tensor& pair, ModelParameters& model,
                           bool training = true) {
  Tensor f = fdn_forward(pair, model, training);
  Tensor p = conv2d(f, model.projection.weight, model.projection.bias, 1, 0);
  Tensor h = p;
  for (std::size_t i = 0; i < model.flow_head.size(); ++i) {
    h = conv2d(h, model.flow_head[i].weight, model.flow_head[i].bias, 1, 1);
    if (i + 1 < model.flow_head.size()) h = relu(h);
  }
  return h;
}

}  // namespace fdnflow
