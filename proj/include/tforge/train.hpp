// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tforge/corpus.hpp"
#include "tforge/fusion.hpp"
#include "tforge/talker.hpp"
#include "tforge/thinker.hpp"

namespace tforge {

enum class TrainStage { kTalkerTts, kThinkerText, kEndToEnd };

TrainStage parse_train_stage(std::string_view name);
std::string_view to_string(TrainStage stage);

struct TrainOptions {
  std::size_t steps = 2000;
  double learning_rate = 3e-3;
  double clip_norm = 1.0;
  // Stop once the loss is below stop_loss and stage-0 teacher-forced accuracy
  // of every codebook is at least stop_accuracy. stop_loss <= 0 disables.
  double stop_loss = 0.0;
  double stop_accuracy = 0.0;
  bool unfreeze_thinker = false;  // end_to_end only
};

struct TrainReport {
  std::vector<double> loss_curve;  // objective before each update
  std::size_t steps = 0;
  double final_loss = 0.0;         // objective after the last update
  std::vector<double> accuracy;    // per codebook (talker) or one value (thinker)
  double seconds = 0.0;
};

// Where the fusion layer's hidden-state input comes from.
enum class HiddenSource { kZeros, kThinker };

struct TalkerEval {
  double objective = 0.0;            // mean over utterances
  std::vector<double> accuracy;      // stage-0 teacher-forced, per codebook, pooled
};

TalkerEval evaluate_talker(const FusionParams& fusion, const TalkerParams& talker, const Corpus& corpus,
                           HiddenSource source, const ThinkerParams* thinker = nullptr);

double evaluate_thinker(const ThinkerParams& thinker, const Corpus& corpus, std::vector<double>* accuracy = nullptr);

// Thinker hidden states for an utterance's text, teacher-forced: row k is the
// state of the position that predicts text[k].
Tensor thinker_text_hidden(const ThinkerParams& thinker, const Utterance& u);

TrainReport train_talker_tts(FusionParams& fusion, TalkerParams& talker, const Corpus& corpus,
                             const TrainOptions& options);
TrainReport train_thinker_text(ThinkerParams& thinker, const Corpus& corpus, const TrainOptions& options);
TrainReport train_end_to_end(ThinkerParams& thinker, FusionParams& fusion, TalkerParams& talker, const Corpus& corpus,
                             const TrainOptions& options);

// step,loss lines.
void write_loss_curve(const std::string& path, const std::vector<double>& curve);

}  // namespace tforge
