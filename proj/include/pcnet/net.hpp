#pragma once

// Encoder-decoder association network.
//
//   input [B,3,H,W]
//   encoder: 5 blocks of two 3x3 convs; blocks 2..5 open with a stride-2 conv
//   decoder: 4 stride-2 deconvs back to H x W, each fused with the matching
//            encoder feature (optional skip)
//   sub-pixel: 3x3 conv to D*16 channels + pixel shuffle x4 -> E [B,D,4H,4W]
//   heads: 3x3 conv E -> 9 association logits, 3x3 conv E -> 3 SR channels
//
// The same Params drive both the global and the local (patch) branch.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pcnet/ops.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

struct NetConfig {
  std::size_t base_channels = 16;
  std::size_t encoder_blocks = 5;
  std::size_t assoc_channels = 9;
  std::size_t sr_channels = 3;
  std::size_t upscale = 4;
  std::size_t embed_dim = 16;
  bool use_skips = true;
  std::uint64_t seed = 0;
  double leaky_slope = 0.1;

  void validate() const {
    if (encoder_blocks != 5) throw ConfigError("encoder_blocks must be 5");
    if (assoc_channels != 9) throw ConfigError("assoc_channels must be 9");
    if (upscale != 4) throw ConfigError("upscale must be 4");
    if (base_channels == 0 || embed_dim == 0 || sr_channels == 0) throw ConfigError("channel counts must be positive");
  }

  // Total downsampling of the encoder.
  std::size_t input_multiple() const { return std::size_t{1} << (encoder_blocks - 1); }
  std::size_t width(std::size_t block) const { return base_channels << block; }  // block is 0-based
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
};

// Names and shapes of every parameter in a stable order.
inline std::vector<ParamSpec> param_layout(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    out.push_back({name + ".weight", Shape{cout, cin, k, k}, cin * k * k});
    out.push_back({name + ".bias", Shape{cout}, cin * k * k});
  };
  auto deconv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    out.push_back({name + ".weight", Shape{cin, cout, k, k}, cout * k * k});
    out.push_back({name + ".bias", Shape{cout}, cout * k * k});
  };
  std::size_t prev = 3;
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    const std::string block = "enc" + std::to_string(i + 1);
    conv(block + ".conv_a", prev, cfg.width(i), 3);
    conv(block + ".conv_b", cfg.width(i), cfg.width(i), 3);
    prev = cfg.width(i);
  }
  for (std::size_t i = cfg.encoder_blocks - 1; i-- > 0;) {
    const std::string level = "dec" + std::to_string(i + 1);
    deconv(level + ".up", cfg.width(i + 1), cfg.width(i), 4);
    conv(level + ".fuse", cfg.use_skips ? 2 * cfg.width(i) : cfg.width(i), cfg.width(i), 3);
  }
  conv("subpixel.conv", cfg.width(0), cfg.embed_dim * cfg.upscale * cfg.upscale, 3);
  conv("head.assoc", cfg.embed_dim, cfg.assoc_channels, 3);
  conv("head.sr", cfg.embed_dim, cfg.sr_channels, 3);
  return out;
}

// Named parameter set with stable ordering.
template <typename T>
class Params {
 public:
  void add(std::string name, Tensor<T> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
  }

  const Tensor<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].second;
  }
  Tensor<T>& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
template <typename T>
Params<T> init_params(const NetConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  Params<T> params;
  for (const auto& spec : param_layout(cfg)) {
    std::vector<T> data(numel(spec.shape), T{0});
    if (spec.shape.size() > 1) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : data) v = static_cast<T>(dist(rng));
    }
    params.add(spec.name, Tensor<T>(spec.shape, std::move(data), true));
  }
  return params;
}

template <typename T>
struct NetOutput {
  Tensor<T> logits;     // [B,9,4H,4W] raw association scores
  Tensor<T> assoc;      // softmax over the 9 channels
  Tensor<T> sr;         // [B,3,4H,4W] super-resolved image
  Tensor<T> embedding;  // [B,D,4H,4W] pixel embedding shared by both heads
};

template <typename T>
NetOutput<T> forward(const Params<T>& params, const NetConfig& cfg, const Tensor<T>& x) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != 3) throw UsageError("forward: input must be [B,3,H,W], got " + to_string(x.shape()));
  const std::size_t m = cfg.input_multiple();
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0 || x.dim(2) == 0 || x.dim(3) == 0)
    throw UsageError("forward: input " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " is not divisible by " + std::to_string(m) + "; pad the image first");
  const T slope = static_cast<T>(cfg.leaky_slope);
  auto conv = [&](const Tensor<T>& in, const std::string& name, std::size_t stride) {
    return conv2d(in, params[name + ".weight"], params[name + ".bias"], stride, 1);
  };

  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    const std::string block = "enc" + std::to_string(i + 1);
    h = leaky_relu(conv(h, block + ".conv_a", i == 0 ? 1 : 2), slope);
    h = leaky_relu(conv(h, block + ".conv_b", 1), slope);
    skips.push_back(h);
  }
  for (std::size_t i = cfg.encoder_blocks - 1; i-- > 0;) {
    const std::string level = "dec" + std::to_string(i + 1);
    h = leaky_relu(deconv2d(h, params[level + ".up.weight"], params[level + ".up.bias"], 2, 1), slope);
    if (cfg.use_skips) h = concat_channels<T>({h, skips[i]});
    h = leaky_relu(conv(h, level + ".fuse", 1), slope);
  }
  auto embedding = leaky_relu(pixel_shuffle(conv(h, "subpixel.conv", 1), cfg.upscale), slope);
  auto logits = conv(embedding, "head.assoc", 1);
  auto sr = conv(embedding, "head.sr", 1);
  auto assoc = softmax_channel(logits);
  return {logits, assoc, sr, embedding};
}

}  // namespace pcnet
