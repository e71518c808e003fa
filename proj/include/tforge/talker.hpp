// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tforge/fusion.hpp"
#include "tforge/nn.hpp"
#include "tforge/rng.hpp"

namespace tforge {

struct TalkerConfig {
  std::size_t codebooks = 8;
  std::size_t vocab = 1024;  // per codebook, including the reserved BOS/EOS ids
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t backbone_layers = 2;
  std::size_t mtp_layers = 4;
  std::size_t max_positions = 512;
  bool share_heads = false;
  Activation activation = Activation::kGelu;
  // Per-stage loss weights; empty means 1 for every stage.
  std::vector<double> stage_weights;

  std::size_t stages() const { return mtp_layers + 1; }
  double stage_weight(std::size_t stage) const;
};

// One audio time step: a token per codebook.
struct CodebookFrame {
  std::vector<TokenId> tokens;

  static CodebookFrame filled(std::size_t codebooks, TokenId id) { return {std::vector<TokenId>(codebooks, id)}; }
  std::size_t arity() const { return tokens.size(); }
  // Generation stops on EOS in the first codebook only.
  bool is_stop() const { return !tokens.empty() && tokens.front() == kEos; }
  friend bool operator==(const CodebookFrame&, const CodebookFrame&) = default;
};

struct TalkerParams {
  TalkerConfig config;
  std::vector<EmbeddingTable> codebook_embeddings;  // C tables [vocab x d]
  EmbeddingTable position_embedding;                // [max_positions x d]
  std::vector<DecoderLayerParams> backbone;
  std::vector<DecoderLayerParams> mtp;          // one layer per MTP stage
  std::vector<LayerNormParams> stage_norms;     // stages()
  std::vector<std::vector<Linear>> head_banks;  // stages() x C, d -> vocab

  static TalkerParams init(const TalkerConfig& config, Rng& rng);
  static TalkerParams zeros(const TalkerConfig& config);
  // Shared heads appear once, under bank 0.
  NamedTensors named(const std::string& prefix = "talker") const;
};

// Per-layer caches of the backbone and of each MTP layer.
struct TalkerCaches {
  KVCache backbone;
  std::vector<KVCache> mtp;

  explicit TalkerCaches(const TalkerConfig& config);
  std::size_t length() const { return backbone.length(); }
};

enum class HeadRows { kAll, kLast };

struct TalkerOutput {
  // logits[stage][codebook] is [rows x vocab]; rows are all input positions
  // or only the last one (HeadRows::kLast).
  std::vector<std::vector<Tensor>> logits;
  std::vector<Tensor> hidden;  // per stage, [t x d]
  std::size_t first_position = 0;
};

// x_i = h_up_i + sum_j Emb_j(frames[i][j]) + Pos(i). With caches, frames are
// the new positions after the cached prefix, and the caches are extended.
TalkerOutput talker_forward(const TalkerParams& params, const UpsampledContext& h_up,
                            std::span<const CodebookFrame> frames, TalkerCaches* caches = nullptr,
                            HeadRows rows = HeadRows::kAll);

// Input vectors before the backbone (exposed for tests).
Tensor talker_input(const TalkerParams& params, const Tensor& h_up, std::span<const CodebookFrame> frames,
                    std::size_t first_position);

struct TalkerLoss {
  Tensor objective;  // weighted mean over (stage, codebook) of per-position NLL
  Tensor total;      // weighted sum of every -log P term
  // Diagnostics (plain doubles).
  std::vector<std::vector<double>> mean_nll;  // [stage][codebook]; NaN when the stage is empty
  std::vector<std::size_t> positions;         // contributing positions per stage
};

// targets is the full frame sequence (index 0 = BOS frame). Stage n at
// position i predicts targets[i + n + 1]; beyond the end it is masked.
TalkerLoss talker_loss(const TalkerOutput& output, std::span<const CodebookFrame> targets,
                       const TalkerConfig& config);

// Teacher-forced top-1 accuracy per codebook at one stage.
std::vector<double> teacher_forced_accuracy(const TalkerOutput& output, std::span<const CodebookFrame> targets,
                                            std::size_t stage = 0);

enum class DecodeMode { kBackboneOnly, kMtp };

DecodeMode parse_decode_mode(std::string_view name);
std::string_view to_string(DecodeMode mode);

struct SamplingOptions {
  double temperature = 0.0;  // 0 = greedy
  std::size_t top_k = 0;     // 0 = full vocabulary
  std::uint64_t seed = 0;
};

struct SessionOptions {
  SamplingOptions sampling;
  bool stop_at_eos = true;
};

struct StepResult;

// Decoding state of one stream. Frames emitted by a step become the pending
// inputs of the next step.
class DecodeSession {
 public:
  DecodeSession(const TalkerParams& params, SessionOptions options = {});

  std::size_t processed() const { return caches_.length(); }
  std::span<const CodebookFrame> pending() const { return pending_; }
  std::size_t pending_end() const { return processed() + pending_.size(); }
  bool closed() const { return closed_; }
  std::size_t backbone_calls() const { return calls_; }

 private:
  friend StepResult decode_step(const TalkerParams&, DecodeSession&, const UpsampledContext&, DecodeMode);
  TalkerCaches caches_;
  std::vector<CodebookFrame> pending_;
  SessionOptions options_;
  Rng rng_;
  bool closed_ = false;
  std::size_t calls_ = 0;
};

struct StepResult {
  std::vector<CodebookFrame> frames;  // stop frame excluded
  bool reached_eos = false;
  std::size_t positions = 0;  // positions pushed through the backbone
  std::vector<std::vector<Tensor>> logits;  // [stage][codebook], newest position
};

// One backbone call over the session's pending positions. context must hold
// the upsampled vectors for exactly those positions.
StepResult decode_step(const TalkerParams& params, DecodeSession& session, const UpsampledContext& context,
                       DecodeMode mode);

struct StepTrace {
  struct Call {
    double ms = 0.0;
    std::size_t positions = 0;
    std::size_t frames = 0;
  };
  std::vector<Call> calls;

  std::size_t backbone_calls() const { return calls.size(); }
};

struct GenerateOptions {
  std::size_t max_frames = 64;
  DecodeMode mode = DecodeMode::kMtp;
  std::size_t factor = 3;
  Underrun underrun = Underrun::kPadZeros;
  SessionOptions session;
};

struct GenerateResult {
  std::vector<CodebookFrame> frames;
  StepTrace trace;
  bool reached_eos = false;
  bool underrun = false;
};

GenerateResult generate(const TalkerParams& params, const FusedSteps& fused, const GenerateOptions& options);

// Token-stream text format: one frame per line, C space-separated ids.
void write_token_stream(std::ostream& out, std::span<const CodebookFrame> frames);
std::vector<CodebookFrame> read_token_stream(std::istream& in, std::optional<std::size_t> arity = std::nullopt);

}  // namespace tforge
