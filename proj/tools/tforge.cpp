// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selftest.hpp"
#include "tforge/error.hpp"
#include "tforge/workflow.hpp"

using namespace tforge;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;  // key=value
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";
};

Settings load(const Globals& g) {
  Config c = g.config.empty() ? Config() : Config::load(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::kUsage, "--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_set) c.set("seed", std::to_string(g.seed));
  return Settings::from_config(c);
}

void print_stage_summary(const LatencyReport& r) {
  const StageTimes m = r.mean(), e = r.standard_error();
  std::printf("  first chunk: %zu frames, %zu backbone calls, %zu text tokens%s\n", r.first_chunk_frames,
              r.backbone_calls, r.text_tokens, r.underrun ? ", UNDERRUN" : "");
  std::printf("  thinker  %9.3f +- %.3f ms\n", m.thinker, e.thinker);
  std::printf("  talker   %9.3f +- %.3f ms\n", m.talker, e.talker);
  std::printf("  vocoder  %9.3f +- %.3f ms\n", m.vocoder, e.vocoder);
  std::printf("  residual %9.3f +- %.3f ms\n", m.residual, e.residual);
  std::printf("  total    %9.3f +- %.3f ms\n", m.total, e.total);
}

// Integer option >= 1.
const CLI::Validator kAtLeastOne(
    [](std::string& v) -> std::string {
      try {
        if (std::stoll(v) >= 1) return {};
      } catch (const std::exception&) {
      }
      return "must be an integer >= 1, got " + v;
    },
    "INT>=1");

struct PipelineFlags {
  std::string mode, underrun, vocoder;
  std::size_t repeats = 0;
  bool no_overlap = false;
  bool random_init = false;
};

void add_pipeline_flags(CLI::App* sub, PipelineFlags& f, bool allow_both) {
  std::vector<std::string> modes{"mtp", "backbone_only"};
  if (allow_both) modes.push_back("both");
  sub->add_option("--mode", f.mode, "decode mode")->check(CLI::IsMember(modes));
  sub->add_option("--repeats", f.repeats, "pipeline repetitions")->check(kAtLeastOne);
  sub->add_option("--underrun", f.underrun, "text underrun policy")->check(CLI::IsMember({"pad_zeros", "stall"}));
  sub->add_option("--vocoder", f.vocoder, "vocoder profile")
      ->check(CLI::IsMember({"direct_codec", "flow_matching_proxy"}));
  sub->add_flag("--no-overlap", f.no_overlap, "talker starts after the thinker has finished");
  sub->add_flag("--random-init", f.random_init, "seeded random weights instead of checkpoints (timing only)");
}

void apply(const PipelineFlags& f, Settings& s) {
  if (!f.mode.empty() && f.mode != "both") s.decode.mode = parse_decode_mode(f.mode);
  if (f.repeats) s.pipeline.repetitions = f.repeats;
  if (!f.underrun.empty()) s.decode.underrun = parse_underrun(f.underrun);
  if (!f.vocoder.empty()) s.pipeline.vocoder = parse_vocoder_profile(f.vocoder);
  if (f.no_overlap) s.pipeline.overlap = false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tforge: multi-codebook talker toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& v) { g.seed = v, g.seed_set = true; }, "global seed");
  app.add_option("--out-dir", g.out_dir, "directory for every artifact")->capture_default_str();

  app.add_subcommand("train-codec", "train the residual VQ codec");
  app.add_subcommand("gen-corpus", "generate the synthetic parallel corpus");

  auto* train = app.add_subcommand("train", "run one training stage");
  std::string stage;
  std::size_t steps = 0;
  double lr = 0.0;
  bool unfreeze = false;
  train->add_option("--stage", stage, "training stage")
      ->required()
      ->check(CLI::IsMember({"talker_tts", "thinker_text", "end_to_end"}));
  train->add_option("--steps", steps, "optimizer steps")->check(kAtLeastOne);
  train->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
  train->add_flag("--unfreeze-thinker", unfreeze, "end_to_end also updates the thinker");

  auto* generate = app.add_subcommand("generate", "run the streaming pipeline once per repetition");
  PipelineFlags gen_flags;
  std::size_t max_frames = 0;
  add_pipeline_flags(generate, gen_flags, false);
  generate->add_option("--max-frames", max_frames, "frame budget")->check(kAtLeastOne);

  auto* bench = app.add_subcommand("bench", "repeated latency runs with per-stage CSV");
  PipelineFlags bench_flags;
  add_pipeline_flags(bench, bench_flags, true);

  auto* simulate = app.add_subcommand("simulate", "additive cost model");
  std::string scenario = "all";
  simulate->add_option("--scenario", scenario, "config, a reference scenario, or all")
      ->check(CLI::IsMember({"all", "config", "single_codebook_flow", "multi_codebook_direct", "multi_codebook_mtp4"}))
      ->capture_default_str();

  auto* selftest = app.add_subcommand("selftest", "run the acceptance checks");
  std::string work_dir;
  selftest->add_option("--work-dir", work_dir, "scratch directory (default <out-dir>/selftest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "selftest") {
      selftest::Options o;
      o.work_dir = work_dir.empty() ? g.out_dir + "/selftest" : work_dir;
      if (!g.config.empty()) o.toy_config = g.config;
      std::vector<std::string> failed;
      selftest::run_all(o, [&](const selftest::Outcome& r) {
        std::printf("%s\n", selftest::format_line(r).c_str());
        std::fflush(stdout);
        if (!r.passed) failed.push_back(std::to_string(r.id) + " " + r.name);
      });
      if (failed.empty()) return 0;
      std::string list;
      for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
      std::fprintf(stderr, "tforge selftest: failing checks: %s\n", list.c_str());
      return 1;
    }

    Settings s = load(g);
    if (command == "train-codec") {
      const CodecStageResult r = train_codec_stage(s, g.out_dir);
      for (std::size_t j = 0; j < r.log.objective.size(); ++j) {
        std::printf("stage %zu: objective %.6f after %zu iterations\n", j, r.log.objective[j].back(),
                    r.log.objective[j].size());
      }
      std::printf("held-out reconstruction MSE %.6f -> %s\n", r.held_out_mse, codec_path(g.out_dir).c_str());
    } else if (command == "gen-corpus") {
      const Corpus c = gen_corpus_stage(s, g.out_dir);
      std::size_t frames = 0;
      for (const auto& u : c.utterances) frames += u.codes.size();
      std::printf("%zu utterances, %zu frames -> %s\n", c.utterances.size(), frames, corpus_path(g.out_dir).c_str());
    } else if (command == "train") {
      if (steps) s.train.steps = steps;
      if (lr > 0.0) s.train.learning_rate = lr;
      if (unfreeze) s.train.unfreeze_thinker = true;
      const TrainStage st = parse_train_stage(stage);
      const TrainReport r = train_stage(s, g.out_dir, st);
      std::printf("%s: %zu steps, loss %.6f -> %.6f, %.1f s\n", stage.c_str(), r.steps,
                  r.loss_curve.empty() ? 0.0 : r.loss_curve.front(), r.final_loss, r.seconds);
      std::printf("accuracy:");
      for (double a : r.accuracy) std::printf(" %.4f", a);
      std::printf("\n");
    } else if (command == "generate") {
      apply(gen_flags, s);
      if (max_frames) s.decode.max_frames = max_frames;
      const GenerateOutputs out = generate_stage(s, g.out_dir, gen_flags.random_init);
      std::printf("%zu text tokens, %zu frames, %zu backbone calls%s\n", out.result.text.size(),
                  out.result.frames.size(), out.result.backbone_calls, out.result.underrun ? ", underrun" : "");
      print_stage_summary(out.result.report);
      std::printf("wrote %s, %s, %s\n", out.wav.c_str(), out.transcript.c_str(), out.report_csv.c_str());
    } else if (command == "bench") {
      apply(bench_flags, s);
      std::vector<DecodeMode> modes;
      if (bench_flags.mode.empty() || bench_flags.mode == "both") {
        modes = {DecodeMode::kMtp, DecodeMode::kBackboneOnly};
      } else {
        modes = {parse_decode_mode(bench_flags.mode)};
      }
      for (DecodeMode m : modes) {
        Settings run = s;
        run.decode.mode = m;
        const std::string name = "bench_" + std::string(to_string(m));
        const GenerateOutputs out = generate_stage(run, g.out_dir, bench_flags.random_init, name);
        std::printf("%s (%zu repetitions)\n", std::string(to_string(m)).c_str(), run.pipeline.repetitions);
        print_stage_summary(out.result.report);
        std::printf("  csv: %s\n", out.report_csv.c_str());
      }
    } else if (command == "simulate") {
      std::vector<std::string> names{scenario};
      if (scenario == "all") {
        names = {"single_codebook_flow", "multi_codebook_direct", "multi_codebook_mtp4", "config"};
      }
      for (const auto& n : names) {
        const SimulateOutputs out = simulate_stage(s, g.out_dir, n);
        std::printf("%s: %zu frames, %zu text tokens, %zu backbone calls, %s\n", n.c_str(),
                    out.report.first_chunk_frames, out.report.text_tokens, out.report.backbone_calls,
                    out.report.vocoder.c_str());
        print_stage_summary(out.report);
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "tforge %s failed: %s\n", command.c_str(), e.what());
    return e.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tforge %s failed: %s\n", command.c_str(), e.what());
    return 1;
  }
  return 0;
}
