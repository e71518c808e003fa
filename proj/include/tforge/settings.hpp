// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tforge/codec.hpp"
#include "tforge/config.hpp"
#include "tforge/corpus.hpp"
#include "tforge/fusion.hpp"
#include "tforge/latency.hpp"
#include "tforge/talker.hpp"
#include "tforge/thinker.hpp"
#include "tforge/train.hpp"

namespace tforge {

struct DecodeSettings {
  DecodeMode mode = DecodeMode::kMtp;
  double temperature = 0.0;
  std::size_t top_k = 0;
  Underrun underrun = Underrun::kPadZeros;
  std::size_t max_frames = 64;
  std::size_t max_text_tokens = 16;
  bool stop_at_eos = true;
};

struct PipelineSettings {
  ChunkPlan chunks;
  std::size_t repetitions = 5;
  bool overlap = true;
  std::size_t start_tokens = 0;  // 0: ceil(first chunk frames / factor)
  VocoderProfile vocoder = VocoderProfile::kDirectCodec;
  double flow_proxy_ms = 200.0;  // busy cost per chunk of the flow proxy
  std::size_t queue_capacity = 8;
  std::size_t utterance = 0;     // corpus utterance whose prompt is used
  std::vector<TokenId> prompt;   // overrides the corpus prompt when set (without BOS)
  std::uint32_t sample_rate = 16000;
};

struct CostSettings {
  CostModel model;
  bool calibrate = true;  // derive model from the reference totals
  double calibration_token_ms = 50.0;
};

// Every tunable of the toolchain. Widths shared between modules are set once
// and copied into each module config by the accessors below.
struct Settings {
  std::uint64_t seed = 1234;
  ThinkerConfig thinker;
  TalkerConfig talker;
  std::size_t fusion_embed_width = 32;
  std::size_t fusion_hidden_width = 64;
  Activation fusion_activation = Activation::kGelu;
  CodecTrainOptions codec;
  std::size_t codec_training_frames = 4096;
  CorpusSpec corpus;
  TrainOptions train;
  DecodeSettings decode;
  PipelineSettings pipeline;
  CostSettings cost;

  static Settings from_config(const Config& config);
  static const std::vector<std::string>& known_keys();

  FusionConfig fusion_config() const;
  ThinkerConfig thinker_config() const;
  TalkerConfig talker_config() const;
  std::size_t factor() const { return corpus.factor; }
  GenerateOptions generate_options() const;
};

struct Models {
  CodecModel codec;
  ThinkerParams thinker;
  FusionParams fusion;
  TalkerParams talker;

  // Seeded initial weights for every network; the codec is random too.
  static Models init(const Settings& settings);
};

// Files under a model directory.
std::string codec_path(const std::string& dir);
std::string thinker_path(const std::string& dir);
std::string talker_path(const std::string& dir);  // fusion + talker
std::string corpus_path(const std::string& dir);

CodecModel load_codec(const std::string& dir);
void load_thinker(const std::string& dir, ThinkerParams& thinker);
void load_talker(const std::string& dir, FusionParams& fusion, TalkerParams& talker);
void save_talker(const std::string& dir, const FusionParams& fusion, const TalkerParams& talker);

// All three checkpoints; kStaging names the first missing one.
Models load_models(const Settings& settings, const std::string& dir);

}  // namespace tforge
