// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tforge/checkpoint.hpp"
#include "tforge/talker.hpp"

namespace tforge {

using FeatureFrame = std::vector<double>;

// Codec codes occupy talker token ids offset by the reserved BOS/EOS ids.
inline constexpr TokenId kReservedTokens = 2;

struct CodecModel {
  std::vector<Tensor> codebooks;  // C x [entries x feature_width]; row 0 is pinned to zero
  double frame_rate = 12.5;

  std::size_t num_codebooks() const { return codebooks.size(); }
  std::size_t entries() const { return codebooks.empty() ? 0 : codebooks.front().rows(); }
  std::size_t feature_width() const { return codebooks.empty() ? 0 : codebooks.front().cols(); }

  NamedTensors named() const;
  static CodecModel from_named(const NamedTensors& tensors);
  // Untrained baseline: Gaussian entries with row 0 zero.
  static CodecModel random(std::size_t codebooks, std::size_t entries, std::size_t width, double stddev, Rng& rng);
};

// Greedy residual quantization; ties resolve to the lowest index.
std::vector<CodebookFrame> rvq_encode(const CodecModel& model, std::span<const FeatureFrame> features);
// Sum of the selected entries of the first `use_codebooks` codebooks (all when 0).
std::vector<FeatureFrame> rvq_decode(const CodecModel& model, std::span<const CodebookFrame> codes,
                                     std::size_t use_codebooks = 0);
// Residual norm after each stage, index 0 being the input norm.
std::vector<double> rvq_residual_norms(const CodecModel& model, const FeatureFrame& feature);

double mean_squared_error(std::span<const FeatureFrame> a, std::span<const FeatureFrame> b);

// Talker token <-> codec code. Reserved ids decode as the zero entry.
std::vector<CodebookFrame> codes_to_tokens(std::span<const CodebookFrame> codes);
std::vector<CodebookFrame> tokens_to_codes(std::span<const CodebookFrame> tokens);

struct CodecTrainOptions {
  std::size_t codebooks = 8;
  std::size_t entries = 1022;
  std::size_t iterations = 15;
  std::uint64_t seed = 0;
  double frame_rate = 12.5;
};

struct CodecTrainLog {
  // objective[stage][iteration]: mean squared residual after assignment.
  std::vector<std::vector<double>> objective;
};

// Per-stage Lloyd k-means on residuals, k-means++ seeding, entry 0 pinned.
CodecModel train_codebooks(std::span<const FeatureFrame> frames, const CodecTrainOptions& options,
                           CodecTrainLog* log = nullptr);

struct SynthesisLayout {
  std::size_t samples_per_frame = 0;
  std::vector<std::size_t> harmonics;  // cycles per frame of each basis tone
  double gain = 1.0;

  // feature_extract(synth(f)) == matched_filter_scale() * f.
  double matched_filter_scale() const { return gain * static_cast<double>(samples_per_frame) / 2.0; }
};

SynthesisLayout synthesis_layout(std::size_t feature_width, double frame_rate, double sample_rate = 16000.0);

// Per frame, samples_per_frame samples of sum_k f_k * gain * sin(2 pi m_k n / S).
std::vector<double> synth_waveform(std::span<const FeatureFrame> features, double frame_rate,
                                   double sample_rate = 16000.0);
// Matched filter against the same tones; a trailing partial frame is dropped.
std::vector<FeatureFrame> feature_extract(std::span<const double> samples, std::size_t feature_width,
                                          double frame_rate, double sample_rate = 16000.0);

}  // namespace tforge
