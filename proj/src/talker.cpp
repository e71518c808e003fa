// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/talker.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tforge/error.hpp"

namespace tforge {

double TalkerConfig::stage_weight(std::size_t stage) const {
  if (stage_weights.empty()) return 1.0;
  if (stage >= stage_weights.size()) {
    throw Error(ErrorKind::kConfig, "no loss weight for stage " + std::to_string(stage));
  }
  return stage_weights[stage];
}

namespace {

void validate(const TalkerConfig& c) {
  if (c.codebooks == 0) throw Error(ErrorKind::kConfig, "talker needs at least one codebook");
  if (c.vocab <= kEos) throw Error(ErrorKind::kConfig, "codebook vocabulary must exceed the reserved ids");
  if (!c.stage_weights.empty() && c.stage_weights.size() != c.stages()) {
    throw Error(ErrorKind::kConfig, "stage_weights needs " + std::to_string(c.stages()) + " entries");
  }
}

}  // namespace

TalkerParams TalkerParams::init(const TalkerConfig& config, Rng& rng) {
  validate(config);
  TalkerParams p;
  p.config = config;
  for (std::size_t j = 0; j < config.codebooks; ++j) {
    p.codebook_embeddings.push_back(EmbeddingTable::init(config.vocab, config.width, rng));
  }
  p.position_embedding = EmbeddingTable::init(config.max_positions, config.width, rng);
  for (std::size_t l = 0; l < config.backbone_layers; ++l) {
    p.backbone.push_back(DecoderLayerParams::init(config.width, config.heads, config.activation, rng));
  }
  for (std::size_t l = 0; l < config.mtp_layers; ++l) {
    p.mtp.push_back(DecoderLayerParams::init(config.width, config.heads, config.activation, rng));
  }
  for (std::size_t s = 0; s < config.stages(); ++s) {
    p.stage_norms.push_back(LayerNormParams::init(config.width));
    if (config.share_heads && s > 0) {
      p.head_banks.push_back(p.head_banks.front());
      continue;
    }
    std::vector<Linear> bank;
    for (std::size_t j = 0; j < config.codebooks; ++j) bank.push_back(Linear::init(config.width, config.vocab, rng));
    p.head_banks.push_back(std::move(bank));
  }
  return p;
}

TalkerParams TalkerParams::zeros(const TalkerConfig& config) {
  Rng rng(0);
  TalkerParams p = init(config, rng);
  for (auto& [name, t] : p.named()) {
    Tensor target = t;
    std::fill(target.mutable_data().begin(), target.mutable_data().end(), 0.0);
  }
  return p;
}

NamedTensors TalkerParams::named(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t j = 0; j < codebook_embeddings.size(); ++j) {
    out.emplace_back(prefix + ".codebook_embedding." + std::to_string(j), codebook_embeddings[j].table);
  }
  out.emplace_back(prefix + ".position_embedding", position_embedding.table);
  for (std::size_t l = 0; l < backbone.size(); ++l) backbone[l].collect(prefix + ".backbone." + std::to_string(l), out);
  for (std::size_t l = 0; l < mtp.size(); ++l) mtp[l].collect(prefix + ".mtp." + std::to_string(l), out);
  for (std::size_t s = 0; s < stage_norms.size(); ++s) {
    stage_norms[s].collect(prefix + ".stage_norm." + std::to_string(s), out);
    if (config.share_heads && s > 0) continue;
    for (std::size_t j = 0; j < head_banks[s].size(); ++j) {
      head_banks[s][j].collect(prefix + ".head." + std::to_string(s) + "." + std::to_string(j), out);
    }
  }
  return out;
}

TalkerCaches::TalkerCaches(const TalkerConfig& config) : backbone(config.backbone_layers, config.width) {
  for (std::size_t l = 0; l < config.mtp_layers; ++l) mtp.emplace_back(1, config.width);
}

Tensor talker_input(const TalkerParams& params, const Tensor& h_up, std::span<const CodebookFrame> frames,
                    std::size_t first_position) {
  const auto& c = params.config;
  const std::size_t t = frames.size();
  if (h_up.rank() != 2 || h_up.rows() != t || h_up.cols() != c.width) {
    throw Error(ErrorKind::kAlignment, std::to_string(t) + " frames against context " + shape_to_string(h_up.shape()));
  }
  std::vector<TokenId> ids(t);
  Tensor x = add(h_up, positions(params.position_embedding, first_position, t));
  for (std::size_t j = 0; j < c.codebooks; ++j) {
    for (std::size_t i = 0; i < t; ++i) {
      if (frames[i].arity() != c.codebooks) {
        throw Error(ErrorKind::kArity, "frame " + std::to_string(first_position + i) + " has " +
                                           std::to_string(frames[i].arity()) + " tokens, expected " +
                                           std::to_string(c.codebooks));
      }
      ids[i] = frames[i].tokens[j];
    }
    x = add(x, embed(params.codebook_embeddings[j], ids));
  }
  return x;
}

TalkerOutput talker_forward(const TalkerParams& params, const UpsampledContext& h_up,
                            std::span<const CodebookFrame> frames, TalkerCaches* caches, HeadRows rows) {
  const auto& c = params.config;
  if (frames.empty()) throw Error(ErrorKind::kAlignment, "talker_forward needs at least one position");
  if (h_up.size() != frames.size()) {
    throw Error(ErrorKind::kAlignment, "context length " + std::to_string(h_up.size()) + " != history length " +
                                           std::to_string(frames.size()));
  }
  TalkerOutput out;
  out.first_position = caches ? caches->length() : 0;
  if (out.first_position == 0 && frames.front() != CodebookFrame::filled(c.codebooks, kBos)) {
    throw Error(ErrorKind::kContract, "position 0 must hold the BOS frame");
  }
  const std::size_t t = frames.size();
  Tensor h = decoder_stack(params.backbone, talker_input(params, h_up.vectors, frames, out.first_position),
                           caches ? &caches->backbone : nullptr);
  for (std::size_t s = 0; s < c.stages(); ++s) {
    if (s > 0) {
      std::span<const DecoderLayerParams> layer(&params.mtp[s - 1], 1);
      h = decoder_stack(layer, h, caches ? &caches->mtp[s - 1] : nullptr);
    }
    out.hidden.push_back(h);
    const Tensor normed = params.stage_norms[s](rows == HeadRows::kLast ? slice_rows(h, t - 1, t) : h);
    std::vector<Tensor> per_codebook;
    for (std::size_t j = 0; j < c.codebooks; ++j) per_codebook.push_back(params.head_banks[s][j](normed));
    out.logits.push_back(std::move(per_codebook));
  }
  return out;
}

TalkerLoss talker_loss(const TalkerOutput& output, std::span<const CodebookFrame> targets,
                       const TalkerConfig& config) {
  if (output.logits.empty()) throw Error(ErrorKind::kContract, "empty talker output");
  const std::size_t stages = output.logits.size();
  const std::size_t codebooks = output.logits.front().size();
  const std::size_t t = output.logits.front().front().rows();
  const std::size_t first = output.first_position;
  TalkerLoss loss;
  loss.mean_nll.assign(stages, std::vector<double>(codebooks, std::numeric_limits<double>::quiet_NaN()));
  loss.positions.assign(stages, 0);

  std::vector<Tensor> weighted_means;
  std::vector<Tensor> weighted_sums;
  double weight_total = 0.0;
  std::vector<TokenId> tgt(t);
  for (std::size_t s = 0; s < stages; ++s) {
    const double w = config.stage_weight(s);
    std::size_t used = 0;
    for (std::size_t j = 0; j < codebooks; ++j) {
      used = 0;
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t index = first + i + s + 1;
        if (index < targets.size()) {
          if (targets[index].arity() != codebooks) {
            throw Error(ErrorKind::kArity, "target frame " + std::to_string(index) + " has wrong arity");
          }
          tgt[i] = targets[index].tokens[j];
          ++used;
        } else {
          tgt[i] = kNoIgnore;
        }
      }
      if (used == 0) break;
      const Tensor nll = nll_sum(output.logits[s][j], tgt, kNoIgnore);
      loss.mean_nll[s][j] = nll.item() / static_cast<double>(used);
      weighted_sums.push_back(scale(nll, w));
      weighted_means.push_back(scale(nll, w / static_cast<double>(used)));
      weight_total += w;
    }
    loss.positions[s] = used;
  }
  if (weighted_means.empty()) throw Error(ErrorKind::kDegenerateBatch, "no stage has a target inside the sequence");
  Tensor total = weighted_sums.front();
  Tensor mean_sum = weighted_means.front();
  for (std::size_t k = 1; k < weighted_sums.size(); ++k) {
    total = add(total, weighted_sums[k]);
    mean_sum = add(mean_sum, weighted_means[k]);
  }
  loss.total = total;
  loss.objective = scale(mean_sum, 1.0 / weight_total);
  return loss;
}

namespace {

TokenId argmax_row(std::span<const double> row) {
  return static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
}

TokenId sample_row(std::span<const double> row, const SamplingOptions& opt, Rng& rng) {
  if (opt.temperature <= 0.0) return argmax_row(row);
  std::vector<TokenId> order(row.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::size_t keep = row.size();
  if (opt.top_k > 0 && opt.top_k < row.size()) {
    keep = opt.top_k;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](TokenId a, TokenId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < keep; ++i) mx = std::max(mx, row[order[i]]);
  std::vector<double> weights(keep);
  double z = 0.0;
  for (std::size_t i = 0; i < keep; ++i) z += weights[i] = std::exp((row[order[i]] - mx) / opt.temperature);
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= weights[i];
    if (u < 0.0) return order[i];
  }
  return order[keep - 1];
}

}  // namespace

std::vector<double> teacher_forced_accuracy(const TalkerOutput& output, std::span<const CodebookFrame> targets,
                                            std::size_t stage) {
  const auto& logits = output.logits.at(stage);
  std::vector<double> acc(logits.size(), 0.0);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const Tensor& l = logits[j];
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < l.rows(); ++i) {
      const std::size_t index = output.first_position + i + stage + 1;
      if (index >= targets.size()) continue;
      ++total;
      if (argmax_row(l.data().subspan(i * l.cols(), l.cols())) == targets[index].tokens[j]) ++hits;
    }
    acc[j] = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  }
  return acc;
}

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "mtp") return DecodeMode::kMtp;
  if (name == "backbone_only") return DecodeMode::kBackboneOnly;
  throw Error(ErrorKind::kConfig, "unknown decode mode '" + std::string(name) + "'");
}

std::string_view to_string(DecodeMode mode) { return mode == DecodeMode::kMtp ? "mtp" : "backbone_only"; }

DecodeSession::DecodeSession(const TalkerParams& params, SessionOptions options)
    : caches_(params.config),
      pending_{CodebookFrame::filled(params.config.codebooks, kBos)},
      options_(options),
      rng_(options.sampling.seed) {}

StepResult decode_step(const TalkerParams& params, DecodeSession& session, const UpsampledContext& context,
                       DecodeMode mode) {
  if (session.closed_) throw Error(ErrorKind::kSessionClosed, "stop frame already emitted");
  if (session.pending_.empty()) throw Error(ErrorKind::kContract, "no pending positions");
  if (context.size() != session.pending_.size()) {
    throw Error(ErrorKind::kAlignment, "context for " + std::to_string(context.size()) + " positions, " +
                                           std::to_string(session.pending_.size()) + " pending");
  }
  const auto& c = params.config;
  if (session.pending_end() > c.max_positions) {
    throw Error(ErrorKind::kContract, "sequence would exceed max_positions " + std::to_string(c.max_positions));
  }
  NoGradGuard no_grad;

  StepResult result;
  result.positions = session.pending_.size();
  const std::size_t t = session.pending_.size();
  Tensor h = decoder_stack(params.backbone,
                           talker_input(params, context.vectors, session.pending_, session.processed()),
                           &session.caches_.backbone);
  const std::size_t stages = mode == DecodeMode::kMtp ? c.stages() : 1;
  for (std::size_t s = 0; s < stages; ++s) {
    if (s > 0) {
      std::span<const DecoderLayerParams> layer(&params.mtp[s - 1], 1);
      h = decoder_stack(layer, h, &session.caches_.mtp[s - 1]);
    }
    const Tensor normed = params.stage_norms[s](slice_rows(h, t - 1, t));
    CodebookFrame frame;
    std::vector<Tensor> stage_logits;
    for (std::size_t j = 0; j < c.codebooks; ++j) {
      Tensor logits = params.head_banks[s][j](normed);
      frame.tokens.push_back(sample_row(logits.data(), session.options_.sampling, session.rng_));
      stage_logits.push_back(std::move(logits));
    }
    result.logits.push_back(std::move(stage_logits));
    if (session.options_.stop_at_eos && frame.is_stop()) {
      result.reached_eos = true;
      break;
    }
    result.frames.push_back(std::move(frame));
  }
  ++session.calls_;
  session.pending_ = result.frames;
  if (result.reached_eos) session.closed_ = true;
  return result;
}

GenerateResult generate(const TalkerParams& params, const FusedSteps& fused, const GenerateOptions& options) {
  if (options.max_frames == 0) throw Error(ErrorKind::kContract, "max_frames must be at least 1");
  if (fused.size() > 0 && fused.width != params.config.width) {
    throw Error(ErrorKind::kDimension, "fused width " + std::to_string(fused.width) + " != talker width " +
                                           std::to_string(params.config.width));
  }
  FusedSteps text = fused;
  if (text.size() == 0) text.width = params.config.width;
  GenerateResult out;
  DecodeSession session(params, options.session);
  const std::size_t text_limit = fused.size() * options.factor;
  while (out.frames.size() < options.max_frames && !session.closed()) {
    if (session.pending().empty()) break;
    if (options.underrun == Underrun::kStall && session.pending_end() > text_limit) {
      out.underrun = true;
      break;
    }
    const auto start = std::chrono::steady_clock::now();
    const UpsampledContext ctx = upsample_range(text, session.processed(), session.pending_end(), options.factor);
    StepResult step = decode_step(params, session, ctx, options.mode);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.trace.calls.push_back({ms, step.positions, step.frames.size()});
    for (auto& f : step.frames) {
      if (out.frames.size() == options.max_frames) break;
      out.frames.push_back(std::move(f));
    }
    out.reached_eos = step.reached_eos;
  }
  return out;
}

void write_token_stream(std::ostream& out, std::span<const CodebookFrame> frames) {
  for (const auto& f : frames) {
    for (std::size_t j = 0; j < f.tokens.size(); ++j) {
      if (j) out << ' ';
      out << f.tokens[j];
    }
    out << '\n';
  }
}

std::vector<CodebookFrame> read_token_stream(std::istream& in, std::optional<std::size_t> arity) {
  std::vector<CodebookFrame> frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    CodebookFrame f;
    std::string field;
    while (fields >> field) {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || field.front() == '-') {
        throw Error(ErrorKind::kData, "token stream line " + std::to_string(line_no) + ": bad token '" + field + "'");
      }
      f.tokens.push_back(static_cast<TokenId>(v));
    }
    const std::size_t want = arity ? *arity : (frames.empty() ? f.arity() : frames.front().arity());
    if (f.arity() != want) {
      throw Error(ErrorKind::kArity, "token stream line " + std::to_string(line_no) + " has " +
                                         std::to_string(f.arity()) + " tokens, expected " + std::to_string(want));
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace tforge
