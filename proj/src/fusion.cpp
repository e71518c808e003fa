// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/fusion.hpp"

#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {

FusionParams FusionParams::init(const FusionConfig& config, Rng& rng) {
  FusionParams p;
  p.text_embedding = EmbeddingTable::init(config.text_vocab, config.embed_width, rng);
  p.in_proj = Linear::init(config.embed_width + config.thinker_width, config.hidden_width, rng);
  p.out_proj = Linear::init(config.hidden_width, config.output_width, rng);
  p.activation = config.activation;
  return p;
}

FusionParams FusionParams::zeros(const FusionConfig& config) {
  FusionParams p;
  p.text_embedding = {Tensor::zeros({config.text_vocab, config.embed_width}, true)};
  p.in_proj = Linear::zeros(config.embed_width + config.thinker_width, config.hidden_width);
  p.out_proj = Linear::zeros(config.hidden_width, config.output_width);
  p.activation = config.activation;
  return p;
}

void FusionParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".text_embedding", text_embedding.table);
  in_proj.collect(prefix + ".in_proj", out);
  out_proj.collect(prefix + ".out_proj", out);
}

FusedSteps fuse(const FusionParams& params, std::span<const TokenId> text_ids, const Tensor& thinker_hidden) {
  const std::size_t n = text_ids.size();
  if (thinker_hidden.rank() != 2 || thinker_hidden.rows() != n) {
    throw Error(ErrorKind::kAlignment, std::to_string(n) + " text ids against hidden states " +
                                           shape_to_string(thinker_hidden.shape()));
  }
  if (thinker_hidden.cols() != params.thinker_width()) {
    throw Error(ErrorKind::kDimension, "hidden width " + std::to_string(thinker_hidden.cols()) + " != " +
                                           std::to_string(params.thinker_width()));
  }
  const Tensor joined = concat_cols(embed(params.text_embedding, text_ids), thinker_hidden);
  const Tensor hidden = activate(params.in_proj(joined), params.activation);
  return {params.out_proj(hidden), params.output_width()};
}

FusedSteps append_fused(const FusedSteps& base, const FusedSteps& more) {
  if (base.size() == 0) return more;
  if (more.size() == 0) return base;
  if (base.width != more.width) throw Error(ErrorKind::kDimension, "fused widths differ");
  return {concat_rows({base.vectors, more.vectors}), base.width};
}

Underrun parse_underrun(std::string_view name) {
  if (name == "pad_zeros") return Underrun::kPadZeros;
  if (name == "stall") return Underrun::kStall;
  throw Error(ErrorKind::kConfig, "unknown underrun mode '" + std::string(name) + "'");
}

std::string_view to_string(Underrun mode) { return mode == Underrun::kStall ? "stall" : "pad_zeros"; }

std::vector<std::size_t> schedule_slots(std::size_t text_length, std::size_t begin, std::size_t end,
                                        std::size_t factor) {
  if (factor == 0) throw Error(ErrorKind::kContract, "upsample factor must be at least 1");
  std::vector<std::size_t> slots;
  slots.reserve(end > begin ? end - begin : 0);
  for (std::size_t pos = begin; pos < end; ++pos) {
    const bool on_slot = pos % factor == 0 && pos / factor < text_length;
    slots.push_back(on_slot ? pos / factor : kZeroRow);
  }
  return slots;
}

UpsampledContext upsample_range(const FusedSteps& fused, std::size_t begin, std::size_t end, std::size_t factor) {
  UpsampledContext ctx;
  ctx.source_length = fused.size();
  ctx.factor = factor;
  ctx.slots = schedule_slots(fused.size(), begin, end, factor);
  if (!ctx.slots.empty()) ctx.vectors = select_rows(fused.vectors, ctx.slots, fused.width);
  return ctx;
}

UpsampledContext upsample_schedule(const FusedSteps& fused, std::size_t t, std::size_t factor) {
  return upsample_range(fused, 0, t, factor);
}

std::size_t text_needed_for(std::size_t end, std::size_t factor) { return (end + factor - 1) / factor; }

}  // namespace tforge
