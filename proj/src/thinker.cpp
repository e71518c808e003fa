// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/thinker.hpp"

#include <algorithm>

#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {

ThinkerParams ThinkerParams::init(const ThinkerConfig& config, Rng& rng) {
  if (config.vocab <= kEos || config.vocab > 256) {
    throw Error(ErrorKind::kConfig, "thinker vocabulary must lie in [2, 256]");
  }
  ThinkerParams p;
  p.config = config;
  p.token_embedding = EmbeddingTable::init(config.vocab, config.width, rng);
  p.position_embedding = EmbeddingTable::init(config.max_positions, config.width, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.layers.push_back(DecoderLayerParams::init(config.width, config.heads, config.activation, rng));
  }
  p.final_norm = LayerNormParams::init(config.width);
  p.head = Linear::init(config.width, config.vocab, rng);
  return p;
}

NamedTensors ThinkerParams::named(const std::string& prefix) const {
  NamedTensors out;
  out.emplace_back(prefix + ".token_embedding", token_embedding.table);
  out.emplace_back(prefix + ".position_embedding", position_embedding.table);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer." + std::to_string(l), out);
  final_norm.collect(prefix + ".final_norm", out);
  head.collect(prefix + ".head", out);
  return out;
}

ThinkerOutput thinker_forward(const ThinkerParams& params, std::span<const TokenId> ids, KVCache* cache) {
  if (ids.empty()) throw Error(ErrorKind::kContract, "thinker_forward needs at least one token");
  const std::size_t start = cache ? cache->length() : 0;
  const Tensor x = add(embed(params.token_embedding, ids), positions(params.position_embedding, start, ids.size()));
  const Tensor hidden = params.final_norm(decoder_stack(params.layers, x, cache));
  return {params.head(hidden), hidden};
}

ThinkerSession::ThinkerSession(const ThinkerParams& params, std::span<const TokenId> prompt, std::size_t max_tokens)
    : params_(&params), cache_(params.config.layers, params.config.width), max_tokens_(max_tokens) {
  if (prompt.empty()) throw Error(ErrorKind::kContract, "thinker prompt is empty");
  if (max_tokens == 0) throw Error(ErrorKind::kContract, "max_tokens must be at least 1");
  NoGradGuard no_grad;
  last_ = thinker_forward(params, prompt, &cache_);
}

std::optional<ThinkerToken> ThinkerSession::next() {
  if (done_) return std::nullopt;
  NoGradGuard no_grad;
  const std::size_t v = params_->config.vocab, d = params_->config.width;
  const std::size_t row = last_.logits.rows() - 1;
  const auto logits = last_.logits.data().subspan(row * v, v);
  const TokenId token = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  if (token == kEos) {
    done_ = true;
    return std::nullopt;
  }
  const auto h = last_.hidden.data().subspan(row * d, d);
  ThinkerToken out{token, std::vector<double>(h.begin(), h.end())};
  ++emitted_;
  if (emitted_ == max_tokens_ || cache_.length() >= params_->config.max_positions) {
    done_ = true;
  } else {
    const TokenId feed[] = {token};
    last_ = thinker_forward(*params_, feed, &cache_);
  }
  return out;
}

std::vector<ThinkerToken> thinker_generate(const ThinkerParams& params, std::span<const TokenId> prompt,
                                           std::size_t max_tokens) {
  ThinkerSession session(params, prompt, max_tokens);
  std::vector<ThinkerToken> out;
  while (auto t = session.next()) out.push_back(std::move(*t));
  return out;
}

}  // namespace tforge
