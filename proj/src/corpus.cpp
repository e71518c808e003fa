// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {

using nlohmann::json;

std::vector<FeatureFrame> random_walk(std::size_t frames, const CorpusSpec& spec, Rng& rng) {
  // Start from the stationary distribution so every frame has the same spread.
  const double spread = spec.walk_step / std::sqrt(1.0 - spec.walk_decay * spec.walk_decay);
  std::vector<FeatureFrame> out;
  out.reserve(frames);
  FeatureFrame x(spec.feature_width);
  for (auto& v : x) v = spread * rng.normal();
  for (std::size_t t = 0; t < frames; ++t) {
    out.push_back(x);
    for (auto& v : x) v = spec.walk_decay * v + spec.walk_step * rng.normal();
  }
  return out;
}

std::vector<FeatureFrame> codec_training_frames(const CorpusSpec& spec, std::size_t count, std::uint64_t seed) {
  if (!(spec.walk_decay >= 0.0 && spec.walk_decay < 1.0)) throw Error(ErrorKind::kConfig, "walk_decay must lie in [0, 1)");
  Rng rng(seed ^ 0xc0dec0dec0deULL);
  std::vector<FeatureFrame> out;
  while (out.size() < count) {
    const auto walk = random_walk(std::min<std::size_t>(64, count - out.size()), spec, rng);
    out.insert(out.end(), walk.begin(), walk.end());
  }
  return out;
}

Corpus gen_corpus(const CorpusSpec& spec, const CodecModel& codec, std::uint64_t seed) {
  if (spec.text_min == 0 || spec.text_min > spec.text_max) throw Error(ErrorKind::kConfig, "bad text length range");
  if (spec.text_vocab <= kEos + spec.utterances) {
    throw Error(ErrorKind::kConfig, "text vocabulary too small for distinct first tokens");
  }
  if (spec.feature_width != codec.feature_width()) {
    throw Error(ErrorKind::kFeature, "corpus feature width " + std::to_string(spec.feature_width) +
                                         " != codec width " + std::to_string(codec.feature_width()));
  }
  if (!(spec.walk_decay >= 0.0 && spec.walk_decay < 1.0)) throw Error(ErrorKind::kConfig, "walk_decay must lie in [0, 1)");
  Rng rng(seed);
  const std::size_t first_id = kEos + 1;
  const std::size_t choices = spec.text_vocab - first_id;

  std::vector<TokenId> firsts(choices);
  std::iota(firsts.begin(), firsts.end(), first_id);
  for (std::size_t i = 0; i < spec.utterances; ++i) std::swap(firsts[i], firsts[i + rng.below(choices - i)]);

  Corpus corpus;
  corpus.factor = spec.factor;
  corpus.frame_rate = codec.frame_rate;
  std::set<std::vector<TokenId>> prompts;
  for (std::size_t i = 0; i < spec.utterances; ++i) {
    Utterance u;
    do {
      u.prompt.clear();
      for (std::size_t k = 0; k < spec.prompt_length; ++k) u.prompt.push_back(first_id + rng.below(choices));
    } while (spec.prompt_length > 0 && !prompts.insert(u.prompt).second);
    const std::size_t n = spec.text_min + rng.below(spec.text_max - spec.text_min + 1);
    u.text.push_back(firsts[i]);
    while (u.text.size() < n) u.text.push_back(first_id + rng.below(choices));
    u.features = random_walk(spec.factor * n, spec, rng);
    u.codes = rvq_encode(codec, u.features);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

namespace {

json frames_json(const std::vector<CodebookFrame>& frames) {
  json out = json::array();
  for (const auto& f : frames) out.push_back(f.tokens);
  return out;
}

}  // namespace

std::string corpus_to_json(const Corpus& corpus) {
  json root;
  root["factor"] = corpus.factor;
  root["frame_rate"] = corpus.frame_rate;
  root["utterances"] = json::array();
  for (const auto& u : corpus.utterances) {
    root["utterances"].push_back(
        {{"prompt", u.prompt}, {"text", u.text}, {"features", u.features}, {"codes", frames_json(u.codes)}});
  }
  return root.dump(1) + "\n";
}

Corpus corpus_from_json(const std::string& text) {
  try {
    const json root = json::parse(text);
    Corpus corpus;
    corpus.factor = root.at("factor").get<std::size_t>();
    corpus.frame_rate = root.at("frame_rate").get<double>();
    for (const auto& ju : root.at("utterances")) {
      Utterance u;
      u.prompt = ju.at("prompt").get<std::vector<TokenId>>();
      u.text = ju.at("text").get<std::vector<TokenId>>();
      u.features = ju.at("features").get<std::vector<FeatureFrame>>();
      for (const auto& jf : ju.at("codes")) u.codes.push_back({jf.get<std::vector<TokenId>>()});
      if (u.codes.size() != u.features.size() || u.features.size() != corpus.factor * u.text.size()) {
        throw Error(ErrorKind::kData, "utterance lengths disagree with factor " + std::to_string(corpus.factor));
      }
      corpus.utterances.push_back(std::move(u));
    }
    return corpus;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kData, std::string("malformed corpus: ") + e.what());
  }
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  out << corpus_to_json(corpus);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kStaging, "corpus " + path + " not found; run gen-corpus first");
  std::ostringstream ss;
  ss << in.rdbuf();
  return corpus_from_json(ss.str());
}

std::vector<CodebookFrame> talker_targets(const Utterance& u) {
  const std::size_t c = u.codes.empty() ? 0 : u.codes.front().arity();
  std::vector<CodebookFrame> out{CodebookFrame::filled(c, kBos)};
  const auto tokens = codes_to_tokens(u.codes);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.push_back(CodebookFrame::filled(c, kEos));
  return out;
}

std::vector<TokenId> thinker_prompt(const Utterance& u) {
  std::vector<TokenId> out{kBos};
  out.insert(out.end(), u.prompt.begin(), u.prompt.end());
  return out;
}

}  // namespace tforge
