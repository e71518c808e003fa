// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "tforge/nn.hpp"

namespace tforge {

struct FusionConfig {
  std::size_t text_vocab = 32;
  std::size_t embed_width = 32;
  std::size_t thinker_width = 64;
  std::size_t hidden_width = 64;
  std::size_t output_width = 64;  // must equal the talker width
  Activation activation = Activation::kGelu;
};

// Two linear layers over [text embedding | thinker hidden state].
struct FusionParams {
  EmbeddingTable text_embedding;
  Linear in_proj;
  Linear out_proj;
  Activation activation = Activation::kGelu;

  static FusionParams init(const FusionConfig& config, Rng& rng);
  static FusionParams zeros(const FusionConfig& config);
  std::size_t thinker_width() const { return in_proj.weight.rows() - text_embedding.width(); }
  std::size_t output_width() const { return out_proj.weight.cols(); }
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// One fused vector per text position.
struct FusedSteps {
  Tensor vectors;  // [N x width]; undefined when N == 0
  std::size_t width = 0;

  std::size_t size() const { return vectors.defined() ? vectors.rows() : 0; }
};

// Position-wise: Linear(act(Linear(Emb(ids) | hidden))).
FusedSteps fuse(const FusionParams& params, std::span<const TokenId> text_ids, const Tensor& thinker_hidden);

// Appends more fused rows (streaming text). Row values are independent of
// how the text is split into calls.
FusedSteps append_fused(const FusedSteps& base, const FusedSteps& more);

enum class Underrun { kPadZeros, kStall };

Underrun parse_underrun(std::string_view name);
std::string_view to_string(Underrun mode);

// Source row for each of positions [begin, end) (0-based) of the upsampled
// sequence: fused index k at position k * factor when k < text_length,
// kZeroRow everywhere else.
std::vector<std::size_t> schedule_slots(std::size_t text_length, std::size_t begin, std::size_t end,
                                        std::size_t factor);

struct UpsampledContext {
  Tensor vectors;  // [t x width]; undefined when t == 0
  std::vector<std::size_t> slots;
  std::size_t source_length = 0;
  std::size_t factor = 3;

  std::size_t size() const { return slots.size(); }
};

// Upsamples by `factor` and truncates or zero-pads to exactly t positions.
UpsampledContext upsample_schedule(const FusedSteps& fused, std::size_t t, std::size_t factor = 3);

// Positions [begin, end) of the same schedule.
UpsampledContext upsample_range(const FusedSteps& fused, std::size_t begin, std::size_t end, std::size_t factor = 3);

// Text tokens needed before positions [0, end) are final: ceil(end / factor).
std::size_t text_needed_for(std::size_t end, std::size_t factor);

}  // namespace tforge
