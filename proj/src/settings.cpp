// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/settings.hpp"

#include <cmath>
#include <filesystem>
#include <set>

#include "tforge/checkpoint.hpp"
#include "tforge/error.hpp"

namespace tforge {

namespace {

const std::vector<std::string> kKeys = {
    "seed",
    "thinker.width", "thinker.heads", "thinker.layers", "thinker.max_positions", "thinker.activation",
    "talker.width", "talker.heads", "talker.backbone_layers", "talker.mtp_layers", "talker.max_positions",
    "talker.share_heads", "talker.activation", "talker.stage_weights",
    "fusion.embed_width", "fusion.hidden_width", "fusion.activation", "fusion.factor",
    "codec.codebooks", "codec.entries", "codec.iterations", "codec.frame_rate", "codec.feature_width",
    "codec.training_frames",
    "corpus.utterances", "corpus.text_min", "corpus.text_max", "corpus.prompt_length", "corpus.text_vocab",
    "corpus.walk_step", "corpus.walk_decay",
    "train.steps", "train.learning_rate", "train.clip_norm", "train.stop_loss", "train.stop_accuracy",
    "train.unfreeze_thinker",
    "decode.mode", "decode.temperature", "decode.top_k", "decode.underrun", "decode.max_frames",
    "decode.max_text_tokens", "decode.stop_at_eos",
    "pipeline.first_chunk_seconds", "pipeline.chunk_seconds", "pipeline.repetitions", "pipeline.overlap",
    "pipeline.start_tokens", "pipeline.vocoder", "pipeline.flow_proxy_ms", "pipeline.queue_capacity",
    "pipeline.utterance", "pipeline.prompt", "pipeline.sample_rate",
    "cost.calibrate", "cost.calibration_token_ms", "cost.thinker_token_ms", "cost.talker_call_ms",
    "cost.direct_codec_chunk_ms", "cost.flow_proxy_chunk_ms",
};

std::size_t positive(const Config& c, const std::string& key, std::size_t fallback) {
  const std::size_t v = c.get_size(key, fallback);
  if (v == 0) throw Error(ErrorKind::kConfig, key + " must be positive");
  return v;
}

}  // namespace

const std::vector<std::string>& Settings::known_keys() { return kKeys; }

Settings Settings::from_config(const Config& c) {
  c.require_known(std::set<std::string>(kKeys.begin(), kKeys.end()));
  Settings s;
  s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(s.seed)));

  auto& th = s.thinker;
  th.width = positive(c, "thinker.width", th.width);
  th.heads = positive(c, "thinker.heads", th.heads);
  th.layers = positive(c, "thinker.layers", th.layers);
  th.max_positions = positive(c, "thinker.max_positions", th.max_positions);
  th.activation = parse_activation(c.get_string("thinker.activation", std::string(to_string(th.activation))));

  auto& tk = s.talker;
  tk.width = positive(c, "talker.width", tk.width);
  tk.heads = positive(c, "talker.heads", tk.heads);
  tk.backbone_layers = positive(c, "talker.backbone_layers", tk.backbone_layers);
  tk.mtp_layers = c.get_size("talker.mtp_layers", tk.mtp_layers);
  tk.max_positions = positive(c, "talker.max_positions", tk.max_positions);
  tk.share_heads = c.get_bool("talker.share_heads", tk.share_heads);
  tk.activation = parse_activation(c.get_string("talker.activation", std::string(to_string(tk.activation))));
  tk.stage_weights = c.get_doubles("talker.stage_weights", {});
  if (!tk.stage_weights.empty() && tk.stage_weights.size() != tk.stages()) {
    throw Error(ErrorKind::kConfig, "talker.stage_weights needs " + std::to_string(tk.stages()) + " values");
  }

  s.fusion_embed_width = positive(c, "fusion.embed_width", s.fusion_embed_width);
  s.fusion_hidden_width = positive(c, "fusion.hidden_width", s.fusion_hidden_width);
  s.fusion_activation =
      parse_activation(c.get_string("fusion.activation", std::string(to_string(s.fusion_activation))));
  s.corpus.factor = positive(c, "fusion.factor", s.corpus.factor);

  // Toy default: 64 entries per codebook, so the talker vocabulary is 66.
  s.codec.entries = 64;
  s.codec.codebooks = positive(c, "codec.codebooks", s.codec.codebooks);
  s.codec.entries = positive(c, "codec.entries", s.codec.entries);
  s.codec.iterations = positive(c, "codec.iterations", s.codec.iterations);
  s.codec.frame_rate = c.get_double("codec.frame_rate", s.codec.frame_rate);
  if (!(s.codec.frame_rate > 0.0)) throw Error(ErrorKind::kConfig, "codec.frame_rate must be positive");
  s.corpus.feature_width = positive(c, "codec.feature_width", s.corpus.feature_width);
  s.codec_training_frames = positive(c, "codec.training_frames", s.codec_training_frames);

  auto& cs = s.corpus;
  cs.utterances = positive(c, "corpus.utterances", cs.utterances);
  cs.text_min = positive(c, "corpus.text_min", cs.text_min);
  cs.text_max = positive(c, "corpus.text_max", cs.text_max);
  cs.prompt_length = positive(c, "corpus.prompt_length", cs.prompt_length);
  cs.text_vocab = positive(c, "corpus.text_vocab", cs.text_vocab);
  cs.walk_step = c.get_double("corpus.walk_step", cs.walk_step);
  cs.walk_decay = c.get_double("corpus.walk_decay", cs.walk_decay);
  if (cs.text_min > cs.text_max) throw Error(ErrorKind::kConfig, "corpus.text_min exceeds corpus.text_max");

  auto& tr = s.train;
  tr.steps = c.get_size("train.steps", tr.steps);
  tr.learning_rate = c.get_double("train.learning_rate", tr.learning_rate);
  tr.clip_norm = c.get_double("train.clip_norm", tr.clip_norm);
  tr.stop_loss = c.get_double("train.stop_loss", tr.stop_loss);
  tr.stop_accuracy = c.get_double("train.stop_accuracy", tr.stop_accuracy);
  tr.unfreeze_thinker = c.get_bool("train.unfreeze_thinker", tr.unfreeze_thinker);

  auto& d = s.decode;
  d.mode = parse_decode_mode(c.get_string("decode.mode", std::string(to_string(d.mode))));
  d.temperature = c.get_double("decode.temperature", d.temperature);
  d.top_k = c.get_size("decode.top_k", d.top_k);
  d.underrun = parse_underrun(c.get_string("decode.underrun", std::string(to_string(d.underrun))));
  d.max_frames = positive(c, "decode.max_frames", d.max_frames);
  d.max_text_tokens = positive(c, "decode.max_text_tokens", d.max_text_tokens);
  d.stop_at_eos = c.get_bool("decode.stop_at_eos", d.stop_at_eos);

  auto& p = s.pipeline;
  p.chunks.first_chunk_seconds = c.get_double("pipeline.first_chunk_seconds", p.chunks.first_chunk_seconds);
  p.chunks.chunk_seconds = c.get_double("pipeline.chunk_seconds", p.chunks.chunk_seconds);
  p.chunks.first_frames(s.codec.frame_rate);  // validates
  p.chunks.chunk_frames(s.codec.frame_rate);
  p.repetitions = positive(c, "pipeline.repetitions", p.repetitions);
  p.overlap = c.get_bool("pipeline.overlap", p.overlap);
  p.start_tokens = c.get_size("pipeline.start_tokens", p.start_tokens);
  p.vocoder = parse_vocoder_profile(c.get_string("pipeline.vocoder", std::string(to_string(p.vocoder))));
  p.flow_proxy_ms = c.get_double("pipeline.flow_proxy_ms", p.flow_proxy_ms);
  if (!(p.flow_proxy_ms >= 0.0)) throw Error(ErrorKind::kConfig, "pipeline.flow_proxy_ms must be >= 0");
  p.queue_capacity = positive(c, "pipeline.queue_capacity", p.queue_capacity);
  p.utterance = c.get_size("pipeline.utterance", p.utterance);
  for (double v : c.get_doubles("pipeline.prompt", {})) {
    if (v < 2 || v >= static_cast<double>(cs.text_vocab) || v != std::floor(v)) {
      throw Error(ErrorKind::kConfig, "pipeline.prompt ids must be integers in [2, corpus.text_vocab)");
    }
    p.prompt.push_back(static_cast<TokenId>(v));
  }
  const auto rate = c.get_size("pipeline.sample_rate", p.sample_rate);
  if (rate == 0 || rate > 192000) throw Error(ErrorKind::kConfig, "pipeline.sample_rate out of range");
  p.sample_rate = static_cast<std::uint32_t>(rate);

  auto& k = s.cost;
  k.calibrate = c.get_bool("cost.calibrate", k.calibrate);
  k.calibration_token_ms = c.get_double("cost.calibration_token_ms", k.calibration_token_ms);
  k.model.thinker_token_ms = c.get_double("cost.thinker_token_ms", k.model.thinker_token_ms);
  k.model.talker_call_ms = c.get_double("cost.talker_call_ms", k.model.talker_call_ms);
  k.model.direct_codec_chunk_ms = c.get_double("cost.direct_codec_chunk_ms", k.model.direct_codec_chunk_ms);
  k.model.flow_proxy_chunk_ms = c.get_double("cost.flow_proxy_chunk_ms", k.model.flow_proxy_chunk_ms);
  try {
    k.model.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  if (k.calibrate && !(k.calibration_token_ms >= 0.0)) {
    throw Error(ErrorKind::kConfig, "cost.calibration_token_ms must be >= 0");
  }
  return s;
}

FusionConfig Settings::fusion_config() const {
  return {.text_vocab = corpus.text_vocab,
          .embed_width = fusion_embed_width,
          .thinker_width = thinker.width,
          .hidden_width = fusion_hidden_width,
          .output_width = talker.width,
          .activation = fusion_activation};
}

ThinkerConfig Settings::thinker_config() const {
  ThinkerConfig t = thinker;
  t.vocab = corpus.text_vocab;
  return t;
}

TalkerConfig Settings::talker_config() const {
  TalkerConfig t = talker;
  t.codebooks = codec.codebooks;
  t.vocab = codec.entries + 2;
  return t;
}

GenerateOptions Settings::generate_options() const {
  GenerateOptions g;
  g.max_frames = decode.max_frames;
  g.mode = decode.mode;
  g.factor = factor();
  g.underrun = decode.underrun;
  g.session.sampling = {.temperature = decode.temperature, .top_k = decode.top_k, .seed = seed};
  g.session.stop_at_eos = decode.stop_at_eos;
  return g;
}

Models Models::init(const Settings& s) {
  Rng rng(s.seed);
  Models m{CodecModel::random(s.codec.codebooks, s.codec.entries, s.corpus.feature_width, 1.0, rng),
           ThinkerParams::init(s.thinker_config(), rng), FusionParams::init(s.fusion_config(), rng),
           TalkerParams::init(s.talker_config(), rng)};
  m.codec.frame_rate = s.codec.frame_rate;
  return m;
}

std::string codec_path(const std::string& dir) { return (std::filesystem::path(dir) / "codec.ckpt").string(); }
std::string thinker_path(const std::string& dir) { return (std::filesystem::path(dir) / "thinker.ckpt").string(); }
std::string talker_path(const std::string& dir) { return (std::filesystem::path(dir) / "talker.ckpt").string(); }
std::string corpus_path(const std::string& dir) { return (std::filesystem::path(dir) / "corpus.json").string(); }

namespace {

void require_file(const std::string& path, const std::string& produced_by) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::kStaging, "missing " + path + " (run " + produced_by + " first)");
  }
}

}  // namespace

CodecModel load_codec(const std::string& dir) {
  require_file(codec_path(dir), "train-codec");
  return CodecModel::from_named(load_checkpoint(codec_path(dir)));
}

void load_thinker(const std::string& dir, ThinkerParams& thinker) {
  require_file(thinker_path(dir), "train --stage thinker_text");
  assign_from(load_checkpoint(thinker_path(dir)), thinker.named());
}

void load_talker(const std::string& dir, FusionParams& fusion, TalkerParams& talker) {
  require_file(talker_path(dir), "train --stage talker_tts");
  const NamedTensors stored = load_checkpoint(talker_path(dir));
  NamedTensors f;
  fusion.collect("fusion", f);
  assign_from(stored, f);
  assign_from(stored, talker.named());
}

void save_talker(const std::string& dir, const FusionParams& fusion, const TalkerParams& talker) {
  NamedTensors named;
  fusion.collect("fusion", named);
  for (auto& t : talker.named()) named.push_back(std::move(t));
  save_checkpoint(talker_path(dir), named);
}

Models load_models(const Settings& s, const std::string& dir) {
  Models m = Models::init(s);
  m.codec = load_codec(dir);
  if (m.codec.num_codebooks() != s.codec.codebooks || m.codec.entries() != s.codec.entries) {
    throw Error(ErrorKind::kCheckpoint, "codec checkpoint shape does not match the config");
  }
  load_thinker(dir, m.thinker);
  load_talker(dir, m.fusion, m.talker);
  return m;
}

}  // namespace tforge
