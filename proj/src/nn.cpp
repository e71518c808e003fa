// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/nn.hpp"

#include <cmath>
#include <numeric>

#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error(ErrorKind::kConfig, "unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "gelu";
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kGelu: break;
  }
  return gelu(x);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true),
          Tensor::zeros({out}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(std::size_t width) {
  return {Tensor::filled({width}, 1.0, true), Tensor::zeros({width}, true)};
}

void LayerNormParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

EmbeddingTable EmbeddingTable::init(std::size_t vocab, std::size_t width, Rng& rng, double stddev) {
  return {Tensor::randn({vocab, width}, rng, stddev, true)};
}

Tensor embed(const EmbeddingTable& table, std::span<const TokenId> ids) { return embedding_lookup(table.table, ids); }

DecoderLayerParams DecoderLayerParams::init(std::size_t width, std::size_t heads, Activation act, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw Error(ErrorKind::kDimension,
                "width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  }
  DecoderLayerParams p;
  p.ln1 = LayerNormParams::init(width);
  p.wq = Linear::init(width, width, rng);
  p.wk = Linear::init(width, width, rng);
  p.wv = Linear::init(width, width, rng);
  p.wo = Linear::init(width, width, rng);
  p.ln2 = LayerNormParams::init(width);
  p.fc1 = Linear::init(width, 4 * width, rng);
  p.fc2 = Linear::init(4 * width, width, rng);
  p.heads = heads;
  p.activation = act;
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix, NamedTensors& out) const {
  ln1.collect(prefix + ".ln1", out);
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

void LayerCache::append(const Tensor& k, const Tensor& v) {
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) {
    throw Error(ErrorKind::kCache, "cache width " + std::to_string(width) + " cannot take " +
                                       shape_to_string(k.shape()) + "/" + shape_to_string(v.shape()));
  }
  keys.insert(keys.end(), k.data().begin(), k.data().end());
  values.insert(values.end(), v.data().begin(), v.data().end());
  length += k.rows();
}

Tensor causal_self_attention(const DecoderLayerParams& params, const Tensor& x, LayerCache* cache) {
  const std::size_t d = params.width();
  if (x.rank() != 2 || x.cols() != d) {
    throw Error(ErrorKind::kDimension, "attention input " + shape_to_string(x.shape()) + " for width " + std::to_string(d));
  }
  if (cache && cache->width != d) {
    throw Error(ErrorKind::kCache, "cache width " + std::to_string(cache->width) + " != model width " + std::to_string(d));
  }
  const Tensor q = params.wq(x);
  Tensor k = params.wk(x);
  Tensor v = params.wv(x);
  Tensor keys = k, values = v;
  if (cache && cache->length > 0) {
    keys = concat_rows({Tensor::from({cache->length, d}, cache->keys), k});
    values = concat_rows({Tensor::from({cache->length, d}, cache->values), v});
  }
  if (cache) cache->append(k, v);
  return params.wo(causal_attention(q, keys, values, params.heads));
}

Tensor decoder_layer(const DecoderLayerParams& params, const Tensor& x, LayerCache* cache) {
  const Tensor h = add(x, causal_self_attention(params, params.ln1(x), cache));
  return add(h, params.fc2(activate(params.fc1(params.ln2(h)), params.activation)));
}

Tensor decoder_stack(std::span<const DecoderLayerParams> layers, const Tensor& x, KVCache* cache) {
  if (cache && cache->layers.size() != layers.size()) {
    throw Error(ErrorKind::kCache, "cache has " + std::to_string(cache->layers.size()) + " layers, stack has " +
                                       std::to_string(layers.size()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) h = decoder_layer(layers[i], h, cache ? &cache->layers[i] : nullptr);
  return h;
}

Tensor positions(const EmbeddingTable& table, std::size_t start, std::size_t count) {
  if (start + count > table.vocab_size()) {
    throw Error(ErrorKind::kDimension, "position " + std::to_string(start + count - 1) + " exceeds max length " +
                                           std::to_string(table.vocab_size()));
  }
  std::vector<TokenId> ids(count);
  std::iota(ids.begin(), ids.end(), start);
  return embedding_lookup(table.table, ids);
}

std::vector<Tensor> parameter_tensors(const NamedTensors& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

}  // namespace tforge
