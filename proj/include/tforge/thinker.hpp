// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tforge/nn.hpp"

namespace tforge {

// Small decoder-only text LM standing in for the large language model. Ids 0
// and 1 are BOS/EOS, as in the talker.
struct ThinkerConfig {
  std::size_t vocab = 64;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t max_positions = 64;
  Activation activation = Activation::kGelu;
};

struct ThinkerParams {
  ThinkerConfig config;
  EmbeddingTable token_embedding;
  EmbeddingTable position_embedding;
  std::vector<DecoderLayerParams> layers;
  LayerNormParams final_norm;
  Linear head;  // d -> vocab

  static ThinkerParams init(const ThinkerConfig& config, Rng& rng);
  NamedTensors named(const std::string& prefix = "thinker") const;
};

struct ThinkerOutput {
  Tensor logits;  // [t x vocab]
  Tensor hidden;  // [t x d], final-norm output feeding the head
};

ThinkerOutput thinker_forward(const ThinkerParams& params, std::span<const TokenId> ids, KVCache* cache = nullptr);

// A generated token and the hidden state of the position that produced it.
struct ThinkerToken {
  TokenId token = 0;
  std::vector<double> hidden;
};

// Greedy incremental decoding. The prompt is read on construction; each
// next() yields one token until EOS or the token budget.
class ThinkerSession {
 public:
  ThinkerSession(const ThinkerParams& params, std::span<const TokenId> prompt, std::size_t max_tokens);

  std::optional<ThinkerToken> next();
  bool done() const { return done_; }
  std::size_t emitted() const { return emitted_; }

 private:
  const ThinkerParams* params_;
  KVCache cache_;
  ThinkerOutput last_;
  std::size_t max_tokens_;
  std::size_t emitted_ = 0;
  bool done_ = false;
};

// prompt should begin with BOS. EOS is not included in the result.
std::vector<ThinkerToken> thinker_generate(const ThinkerParams& params, std::span<const TokenId> prompt,
                                           std::size_t max_tokens);

}  // namespace tforge
