// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tforge/checkpoint.hpp"
#include "tforge/ops.hpp"
#include "tforge/tensor.hpp"

namespace tforge {

class Rng;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;

enum class Activation { kGelu, kRelu, kTanh };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation act);
Tensor activate(const Tensor& x, Activation act);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct EmbeddingTable {
  Tensor table;  // [vocab x d]

  static EmbeddingTable init(std::size_t vocab, std::size_t width, Rng& rng, double stddev = 0.1);
  std::size_t vocab_size() const { return table.rows(); }
  std::size_t width() const { return table.cols(); }
};

Tensor embed(const EmbeddingTable& table, std::span<const TokenId> ids);

// Pre-norm transformer block: x + Attn(LN1(x)), then + MLP(LN2(.)).
struct DecoderLayerParams {
  LayerNormParams ln1;
  Linear wq, wk, wv, wo;
  LayerNormParams ln2;
  Linear fc1;  // d -> 4d
  Linear fc2;  // 4d -> d
  std::size_t heads = 1;
  Activation activation = Activation::kGelu;

  static DecoderLayerParams init(std::size_t width, std::size_t heads, Activation act, Rng& rng);
  std::size_t width() const { return wq.weight.rows(); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Keys and values already seen by one attention layer, row-major [length x width].
struct LayerCache {
  std::size_t width = 0;
  std::size_t length = 0;
  std::vector<double> keys;
  std::vector<double> values;

  explicit LayerCache(std::size_t w = 0) : width(w) {}
  void append(const Tensor& k, const Tensor& v);
};

struct KVCache {
  std::vector<LayerCache> layers;

  KVCache() = default;
  KVCache(std::size_t num_layers, std::size_t width) : layers(num_layers, LayerCache(width)) {}
  std::size_t length() const { return layers.empty() ? 0 : layers.front().length; }
};

// With a cache, x holds only new positions; their keys/values are appended.
Tensor causal_self_attention(const DecoderLayerParams& params, const Tensor& x, LayerCache* cache = nullptr);
Tensor decoder_layer(const DecoderLayerParams& params, const Tensor& x, LayerCache* cache = nullptr);
Tensor decoder_stack(std::span<const DecoderLayerParams> layers, const Tensor& x, KVCache* cache = nullptr);

// Learned absolute positions; rows [start, start + count).
Tensor positions(const EmbeddingTable& table, std::size_t start, std::size_t count);

std::vector<Tensor> parameter_tensors(const NamedTensors& named);

}  // namespace tforge
