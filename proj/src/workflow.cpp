// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/workflow.hpp"

#include <filesystem>
#include <fstream>

#include "tforge/checkpoint.hpp"
#include "tforge/error.hpp"
#include "tforge/wav.hpp"

namespace tforge {

namespace {

std::string in_dir(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

Corpus load_corpus_for(const Settings& s, const std::string& dir) {
  if (!std::filesystem::exists(corpus_path(dir))) {
    throw Error(ErrorKind::kStaging, "missing " + corpus_path(dir) + " (run gen-corpus first)");
  }
  Corpus c = load_corpus(corpus_path(dir));
  if (c.factor != s.factor()) throw Error(ErrorKind::kData, "corpus factor differs from fusion.factor");
  return c;
}

}  // namespace

CodecStageResult train_codec_stage(const Settings& s, const std::string& dir) {
  ensure_dir(dir);
  CodecStageResult r;
  CodecTrainOptions options = s.codec;
  options.seed = s.seed;
  const auto frames = codec_training_frames(s.corpus, s.codec_training_frames, s.seed);
  r.model = train_codebooks(frames, options, &r.log);
  const auto held_out = codec_training_frames(s.corpus, 1024, s.seed + 1);
  r.held_out_mse = mean_squared_error(rvq_decode(r.model, rvq_encode(r.model, held_out)), held_out);
  save_checkpoint(codec_path(dir), r.model.named());
  return r;
}

Corpus gen_corpus_stage(const Settings& s, const std::string& dir) {
  ensure_dir(dir);
  const CodecModel codec = load_codec(dir);
  Corpus c = gen_corpus(s.corpus, codec, s.seed);
  save_corpus(corpus_path(dir), c);
  return c;
}

TrainReport train_stage(const Settings& s, const std::string& dir, TrainStage stage) {
  const Corpus corpus = load_corpus_for(s, dir);
  Models m = Models::init(s);
  TrainReport report;
  switch (stage) {
    case TrainStage::kTalkerTts:
      report = train_talker_tts(m.fusion, m.talker, corpus, s.train);
      save_talker(dir, m.fusion, m.talker);
      break;
    case TrainStage::kThinkerText:
      report = train_thinker_text(m.thinker, corpus, s.train);
      save_checkpoint(thinker_path(dir), m.thinker.named());
      break;
    case TrainStage::kEndToEnd:
      load_thinker(dir, m.thinker);
      load_talker(dir, m.fusion, m.talker);
      report = train_end_to_end(m.thinker, m.fusion, m.talker, corpus, s.train);
      save_talker(dir, m.fusion, m.talker);
      if (s.train.unfreeze_thinker) save_checkpoint(thinker_path(dir), m.thinker.named());
      break;
  }
  write_loss_curve(in_dir(dir, "loss_" + std::string(to_string(stage)) + ".csv"), report.loss_curve);
  return report;
}

GenerateOutputs generate_stage(const Settings& s, const std::string& dir, bool random_init, const std::string& prefix) {
  ensure_dir(dir);
  const Models models = random_init ? Models::init(s) : load_models(s, dir);
  std::optional<Corpus> corpus;
  if (s.pipeline.prompt.empty()) corpus = load_corpus_for(s, dir);
  const std::vector<TokenId> prompt = request_prompt(s, corpus ? &*corpus : nullptr);

  GenerateOutputs out;
  out.result = run_pipeline(models, s, prompt);
  if (out.result.rendered_frames != out.result.frames.size()) {
    throw Error(ErrorKind::kPipeline, "vocoder rendered " + std::to_string(out.result.rendered_frames) + " of " +
                                          std::to_string(out.result.frames.size()) + " frames");
  }
  out.wav = in_dir(dir, prefix + ".wav");
  out.transcript = in_dir(dir, prefix + "_tokens.txt");
  out.text = in_dir(dir, prefix + "_text.txt");
  out.report_json = in_dir(dir, prefix + "_report.json");
  out.report_csv = in_dir(dir, prefix + "_report.csv");
  write_wav(out.wav, out.result.samples, s.pipeline.sample_rate);
  {
    std::ofstream t(out.transcript, std::ios::binary);
    write_token_stream(t, out.result.frames);
    if (!t) throw Error(ErrorKind::kIo, "cannot write " + out.transcript);
  }
  std::string text;
  for (std::size_t i = 0; i < out.result.text.size(); ++i) {
    text += (i ? " " : "") + std::to_string(out.result.text[i]);
  }
  write_text(out.text, text + "\n");
  write_text(out.report_json, report_json(out.result.report));
  write_text(out.report_csv, report_csv(out.result.report));
  return out;
}

Scenario config_scenario(const Settings& s) {
  Scenario sc;
  sc.name = "config";
  sc.chunks = s.pipeline.chunks;
  sc.frame_rate = s.codec.frame_rate;
  sc.factor = s.factor();
  sc.mtp_layers = s.talker.mtp_layers;
  sc.mode = s.decode.mode;
  sc.vocoder = s.pipeline.vocoder;
  if (s.pipeline.start_tokens) sc.start_tokens = s.pipeline.start_tokens;
  return sc;
}

CostModel effective_costs(const Settings& s) {
  if (!s.cost.calibrate) return s.cost.model;
  return calibrate_costs(default_calibration_targets(), s.cost.calibration_token_ms);
}

SimulateOutputs simulate_stage(const Settings& s, const std::string& dir, const std::string& scenario) {
  ensure_dir(dir);
  const CalibrationTargets targets = default_calibration_targets();
  Scenario sc;
  if (scenario == "config") {
    sc = config_scenario(s);
  } else if (scenario == targets.single_codebook.name) {
    sc = targets.single_codebook;
  } else if (scenario == targets.multi_codebook.name) {
    sc = targets.multi_codebook;
  } else if (scenario == targets.multi_codebook_mtp.name) {
    sc = targets.multi_codebook_mtp;
  } else {
    throw Error(ErrorKind::kUsage, "unknown scenario '" + scenario + "'");
  }
  SimulateOutputs out;
  out.cost = effective_costs(s);
  out.report = simulate_cost(out.cost, sc);
  out.report.seed = s.seed;
  out.report_json = in_dir(dir, "simulate_" + sc.name + ".json");
  out.report_csv = in_dir(dir, "simulate_" + sc.name + ".csv");
  write_text(out.report_json, report_json(out.report));
  write_text(out.report_csv, report_csv(out.report));
  return out;
}

}  // namespace tforge
