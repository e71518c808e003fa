// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include "tforge/pipeline.hpp"
#include "tforge/settings.hpp"
#include "tforge/train.hpp"

namespace tforge {

// Each command reads and writes its artifacts under one directory.

struct CodecStageResult {
  CodecModel model;
  CodecTrainLog log;
  double held_out_mse = 0.0;
};
CodecStageResult train_codec_stage(const Settings& settings, const std::string& dir);

Corpus gen_corpus_stage(const Settings& settings, const std::string& dir);

// Writes the stage checkpoint(s) and loss_<stage>.csv.
TrainReport train_stage(const Settings& settings, const std::string& dir, TrainStage stage);

struct GenerateOutputs {
  PipelineResult result;
  std::string wav, transcript, text, report_json, report_csv;
};

// random_init uses seeded fresh weights instead of checkpoints (latency work
// only; content is meaningless).
GenerateOutputs generate_stage(const Settings& settings, const std::string& dir, bool random_init = false,
                               const std::string& prefix = "generate");

struct SimulateOutputs {
  LatencyReport report;
  CostModel cost;
  std::string report_json, report_csv;
};

// scenario: "config" or one of the calibration reference names.
SimulateOutputs simulate_stage(const Settings& settings, const std::string& dir, const std::string& scenario);
Scenario config_scenario(const Settings& settings);
CostModel effective_costs(const Settings& settings);

}  // namespace tforge
