#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cohar/ops.hpp"
#include "cohar/rng.hpp"
#include "cohar/tensor.hpp"

namespace cohar {

struct UNetConfig {
  std::size_t in_channels = 6;
  std::size_t out_classes = 2;
  std::size_t depth = 3;          // pooling stages
  std::size_t base_channels = 16;  // level l has base_channels * 2^l channels
  std::size_t kernel_size = 3;     // odd; convolutions use same padding

  void validate() const {
    if (in_channels < 1) throw ConfigError("unet: in_channels must be >= 1");
    if (out_classes < 1) throw ConfigError("unet: out_classes must be >= 1");
    if (depth < 1) throw ConfigError("unet: depth must be >= 1");
    if (base_channels < 1) throw ConfigError("unet: base_channels must be >= 1");
    if (kernel_size % 2 == 0) throw ConfigError("unet: kernel_size must be odd");
  }

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  std::size_t time_multiple() const { return std::size_t{1} << depth; }

  bool operator==(const UNetConfig&) const = default;
};

struct ConvLayer {
  Tensor w;
  Tensor b;
};

struct ConvBlock {
  ConvLayer conv1;
  ConvLayer conv2;
};

struct DecoderLevel {
  ConvLayer up;  // transposed conv, k = stride = 2
  ConvBlock block;
};

/// Encoder of `depth` conv blocks each followed by max-pooling, a bottleneck
/// block, a decoder that upsamples and concatenates the matching encoder
/// activation, and a 1x1 head. Parameters are shared handles; copying a
/// UNet1D aliases them (use clone() for an independent copy).
class UNet1D {
 public:
  UNet1D() = default;

  UNet1D(const UNetConfig& config, SeededRng& rng) : config_(config) {
    config_.validate();
    const std::size_t k = config_.kernel_size;
    std::size_t in = config_.in_channels;
    for (std::size_t l = 0; l < config_.depth; ++l) {
      const std::size_t c = config_.channels_at(l);
      encoder_.push_back({make_conv(c, in, k), make_conv(c, c, k)});
      in = c;
    }
    const std::size_t cmid = config_.channels_at(config_.depth);
    bottleneck_ = {make_conv(cmid, in, k), make_conv(cmid, cmid, k)};
    decoder_.resize(config_.depth);
    for (std::size_t l = config_.depth; l-- > 0;) {
      const std::size_t c = config_.channels_at(l);
      decoder_[l].up = make_up(config_.channels_at(l + 1), c);
      decoder_[l].block = {make_conv(c, 2 * c, k), make_conv(c, c, k)};
    }
    head_ = make_conv(config_.out_classes, config_.channels_at(0), 1);
    initialize(rng);
  }

  const UNetConfig& config() const noexcept { return config_; }

  /// Dense logits [B, out_classes, T] for x of shape [B, in_channels, T].
  /// When `tape` is given, every parameter is watched on it.
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const {
    if (x.rank() != 3 || x.dim(1) != config_.in_channels) {
      throw DimensionError("unet: expected input [B," + std::to_string(config_.in_channels) + ",T], got " +
                           shape_str(x.shape()));
    }
    const std::size_t T = x.dim(2);
    const std::size_t m = config_.time_multiple();
    if (T % m != 0) {
      throw GeometryError("unet: time length " + std::to_string(T) + " is not divisible by 2^depth = " +
                          std::to_string(m) + "; pad to " + std::to_string((T + m - 1) / m * m));
    }
    const std::size_t pad = config_.kernel_size / 2;
    auto p = [tape](const Tensor& t) { return tape ? tape->watch(t) : t; };
    auto conv = [&](const Tensor& in, const ConvLayer& layer) {
      return ops::conv1d(in, p(layer.w), p(layer.b), 1, pad);
    };
    auto block = [&](const Tensor& in, const ConvBlock& b) {
      return ops::relu(conv(ops::relu(conv(in, b.conv1)), b.conv2));
    };

    std::vector<Tensor> skips;
    Tensor h = x;
    for (const auto& level : encoder_) {
      h = block(h, level);
      skips.push_back(h);
      h = ops::maxpool1d(h, 2);
    }
    h = block(h, bottleneck_);
    for (std::size_t l = config_.depth; l-- > 0;) {
      const auto& level = decoder_[l];
      Tensor up = ops::conv_transpose1d(h, p(level.up.w), p(level.up.b), 2);
      Tensor skip = use_skips ? skips[l] : Tensor(skips[l].shape());
      h = block(ops::concat_channels({skip, up}), level.block);
    }
    return ops::conv1d(h, p(head_.w), p(head_.b), 1, 0);
  }

  /// Stable hierarchical names: enc.<l>.conv{1,2}.{w,b}, mid.conv{1,2}.{w,b},
  /// dec.<l>.up.{w,b}, dec.<l>.conv{1,2}.{w,b}, head.{w,b}.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add = [&](const std::string& name, const ConvLayer& layer) {
      out.emplace_back(name + ".w", layer.w);
      out.emplace_back(name + ".b", layer.b);
    };
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      add("enc." + std::to_string(l) + ".conv1", encoder_[l].conv1);
      add("enc." + std::to_string(l) + ".conv2", encoder_[l].conv2);
    }
    add("mid.conv1", bottleneck_.conv1);
    add("mid.conv2", bottleneck_.conv2);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      add("dec." + std::to_string(l) + ".up", decoder_[l].up);
      add("dec." + std::to_string(l) + ".conv1", decoder_[l].block.conv1);
      add("dec." + std::to_string(l) + ".conv2", decoder_[l].block.conv2);
    }
    add("head", head_);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.size();
    return n;
  }

  const ConvLayer& head() const noexcept { return head_; }

  UNet1D clone() const {
    UNet1D copy = *this;
    auto deep = [](ConvLayer& l) {
      l.w = l.w.clone();
      l.b = l.b.clone();
    };
    for (auto& e : copy.encoder_) {
      deep(e.conv1);
      deep(e.conv2);
    }
    deep(copy.bottleneck_.conv1);
    deep(copy.bottleneck_.conv2);
    for (auto& d : copy.decoder_) {
      deep(d.up);
      deep(d.block.conv1);
      deep(d.block.conv2);
    }
    deep(copy.head_);
    return copy;
  }

  /// Test hook: replace every skip activation with zeros.
  bool use_skips = true;

 private:
  static ConvLayer make_conv(std::size_t cout, std::size_t cin, std::size_t k) {
    return {Tensor({cout, cin, k}), Tensor({cout})};
  }
  static ConvLayer make_up(std::size_t cin, std::size_t cout) { return {Tensor({cin, cout, 2}), Tensor({cout})}; }

  // Scaled-uniform fan-in init, bound sqrt(6 / fan_in), in named_parameters()
  // order. Biases start at zero. For the k = stride transposed convolutions
  // every output sees one tap per input channel, so fan_in = Cin.
  void initialize(SeededRng& rng) {
    for (auto& [name, t] : named_parameters()) {
      if (name.ends_with(".b")) continue;
      const bool transposed = name.find(".up.") != std::string::npos;
      const double fan_in = transposed ? static_cast<double>(t.dim(0)) : static_cast<double>(t.dim(1) * t.dim(2));
      const double bound = std::sqrt(6.0 / fan_in);
      Tensor w = t;
      for (double& v : w.data()) v = rng.uniform(-bound, bound);
    }
  }

  UNetConfig config_;
  std::vector<ConvBlock> encoder_;
  ConvBlock bottleneck_;
  std::vector<DecoderLevel> decoder_;
  ConvLayer head_;
};

inline UNet1D build_unet(const UNetConfig& config, SeededRng& rng) { return UNet1D(config, rng); }

inline Tensor unet_forward(const UNet1D& model, const Tensor& x, Tape* tape = nullptr) {
  return model.forward(x, tape);
}

}  // namespace cohar
