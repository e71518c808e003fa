// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tforge/latency.hpp"
#include "tforge/settings.hpp"

namespace tforge {

struct PipelineResult {
  std::vector<TokenId> text;           // thinker tokens
  std::vector<CodebookFrame> frames;   // talker frames (token ids, offset by 2)
  std::vector<double> samples;
  std::size_t rendered_frames = 0;     // frames that reached the synthesizer
  std::size_t backbone_calls = 0;      // whole utterance
  bool underrun = false;
  LatencyReport report;
};

// Thinker, talker and vocoder on their own threads, connected by bounded
// queues. Repeats settings.pipeline.repetitions times; every repetition must
// produce identical content.
PipelineResult run_pipeline(const Models& models, const Settings& settings, const std::vector<TokenId>& prompt);

// Same content computed stage after stage with no threads and no timing.
PipelineResult run_offline(const Models& models, const Settings& settings, const std::vector<TokenId>& prompt);

// Talker frames to PCM: token ids -> codec codes -> features -> tones.
std::vector<double> render_frames(const CodecModel& codec, std::span<const CodebookFrame> frames,
                                  std::uint32_t sample_rate);

// Prompt with BOS, from settings.pipeline.prompt or the chosen corpus utterance.
std::vector<TokenId> request_prompt(const Settings& settings, const Corpus* corpus);

}  // namespace tforge
