// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tforge/talker.hpp"

namespace tforge {

struct ChunkPlan {
  double first_chunk_seconds = 0.8;
  double chunk_seconds = 0.8;

  // round(seconds * rate), at least 1.
  std::size_t first_frames(double frame_rate) const;
  std::size_t chunk_frames(double frame_rate) const;
};

enum class VocoderProfile { kDirectCodec, kFlowMatchingProxy };

VocoderProfile parse_vocoder_profile(std::string_view name);
std::string_view to_string(VocoderProfile profile);

struct CostModel {
  double thinker_token_ms = 0.0;
  double talker_call_ms = 0.0;
  double direct_codec_chunk_ms = 0.0;
  double flow_proxy_chunk_ms = 0.0;

  void validate() const;  // kContract on a negative or non-finite cost
  double vocoder_chunk_ms(VocoderProfile profile) const;
};

struct Scenario {
  std::string name;
  ChunkPlan chunks;
  double frame_rate = 12.5;
  std::size_t factor = 3;
  std::size_t mtp_layers = 4;
  DecodeMode mode = DecodeMode::kMtp;
  VocoderProfile vocoder = VocoderProfile::kDirectCodec;
  // Text tokens the thinker must emit before speech starts; default is
  // ceil(first_frames / factor).
  std::optional<std::size_t> start_tokens;

  std::size_t first_frames() const { return chunks.first_frames(frame_rate); }
  std::size_t tokens_needed() const;
  std::size_t backbone_calls() const;  // for the first chunk
};

struct StageTimes {
  double thinker = 0.0;
  double talker = 0.0;
  double vocoder = 0.0;
  double residual = 0.0;  // total minus the three stages
  double total = 0.0;
};

struct ChunkEvent {
  std::size_t index = 0;
  std::size_t frames = 0;
  double ready_ms = 0.0;  // since request start
};

struct LatencyReport {
  std::string source;  // "simulate" or "live"
  std::string mode;
  std::size_t mtp_layers = 0;
  std::string vocoder;
  std::uint64_t seed = 0;
  std::size_t first_chunk_frames = 0;
  std::size_t backbone_calls = 0;  // before the first chunk
  std::size_t text_tokens = 0;     // thinker tokens consumed before the first chunk
  bool underrun = false;
  std::vector<StageTimes> repetitions;
  std::vector<ChunkEvent> chunks;  // timeline of the last repetition

  StageTimes mean() const;
  StageTimes standard_error() const;  // sample sd / sqrt(R); 0 when R < 2
};

LatencyReport simulate_cost(const CostModel& cost, const Scenario& scenario);

std::string report_json(const LatencyReport& report);
// One row per stage and repetition: stage,ms,mean,stderr.
std::string report_csv(const LatencyReport& report);

// Three reference scenarios and their measured totals. The single-codebook
// total fixes the flow proxy cost, the two multi-codebook totals fix the
// per-call talker cost and the direct codec cost. The per-token thinker cost
// is not identifiable from totals and is passed in.
struct CalibrationTargets {
  Scenario single_codebook;  // flow proxy, no MTP
  double single_codebook_ms = 725.90;
  Scenario multi_codebook;  // direct codec, no MTP
  double multi_codebook_ms = 405.23;
  Scenario multi_codebook_mtp;  // direct codec, MTP
  double multi_codebook_mtp_ms = 348.86;
};

CalibrationTargets default_calibration_targets();
CostModel calibrate_costs(const CalibrationTargets& targets, double thinker_token_ms);

}  // namespace tforge
