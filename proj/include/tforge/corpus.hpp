// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tforge/codec.hpp"

namespace tforge {

struct CorpusSpec {
  std::size_t utterances = 8;
  std::size_t text_min = 4;
  std::size_t text_max = 6;
  std::size_t prompt_length = 3;
  std::size_t text_vocab = 64;  // ids 0/1 reserved
  std::size_t factor = 3;       // frames per text token
  std::size_t feature_width = 16;
  // Features follow x[t+1] = decay * x[t] + step * noise.
  double walk_step = 0.35;
  double walk_decay = 0.9;
};

struct Utterance {
  std::vector<TokenId> prompt;  // without BOS
  std::vector<TokenId> text;
  std::vector<FeatureFrame> features;  // factor * text.size() frames
  std::vector<CodebookFrame> codes;    // codec codes of features
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::size_t factor = 3;
  double frame_rate = 12.5;
};

std::vector<FeatureFrame> random_walk(std::size_t frames, const CorpusSpec& spec, Rng& rng);

// Pool of walk frames for codec training, drawn from the corpus feature process.
std::vector<FeatureFrame> codec_training_frames(const CorpusSpec& spec, std::size_t count, std::uint64_t seed);

// Prompts are distinct, and so are the first text tokens, which makes every
// utterance identifiable from its first fused vector.
Corpus gen_corpus(const CorpusSpec& spec, const CodecModel& codec, std::uint64_t seed);

std::string corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(const std::string& text);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

// [BOS frame, codes as talker tokens..., EOS frame].
std::vector<CodebookFrame> talker_targets(const Utterance& u);

// [BOS, prompt...].
std::vector<TokenId> thinker_prompt(const Utterance& u);

}  // namespace tforge
