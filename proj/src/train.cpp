// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "tforge/error.hpp"
#include "tforge/optim.hpp"

namespace tforge {

TrainStage parse_train_stage(std::string_view name) {
  if (name == "talker_tts") return TrainStage::kTalkerTts;
  if (name == "thinker_text") return TrainStage::kThinkerText;
  if (name == "end_to_end") return TrainStage::kEndToEnd;
  throw Error(ErrorKind::kUsage, "unknown training stage '" + std::string(name) + "'");
}

std::string_view to_string(TrainStage stage) {
  switch (stage) {
    case TrainStage::kTalkerTts: return "talker_tts";
    case TrainStage::kThinkerText: return "thinker_text";
    case TrainStage::kEndToEnd: return "end_to_end";
  }
  return "?";
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_corpus(const Corpus& corpus) {
  if (corpus.utterances.empty()) throw Error(ErrorKind::kData, "empty corpus");
}

Tensor mean_of(const std::vector<Tensor>& losses) {
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, 1.0 / static_cast<double>(losses.size()));
}

struct TalkerBatchLoss {
  Tensor objective;
  std::vector<std::size_t> hits, total;  // stage-0 argmax hits per codebook
};

TalkerBatchLoss talker_batch(const FusionParams& fusion, const TalkerParams& talker, const Corpus& corpus,
                             HiddenSource source, const ThinkerParams* thinker, bool track_thinker_grad) {
  const std::size_t c = talker.config.codebooks;
  TalkerBatchLoss out{Tensor(), std::vector<std::size_t>(c, 0), std::vector<std::size_t>(c, 0)};
  std::vector<Tensor> losses;
  for (const auto& u : corpus.utterances) {
    const auto targets = talker_targets(u);
    if (targets.front().arity() != c) {
      throw Error(ErrorKind::kArity, "corpus frames have " + std::to_string(targets.front().arity()) +
                                         " codebooks, talker has " + std::to_string(c));
    }
    const std::span<const CodebookFrame> inputs(targets.data(), targets.size() - 1);
    Tensor hidden;
    if (source == HiddenSource::kZeros) {
      hidden = Tensor::zeros({u.text.size(), fusion.thinker_width()});
    } else if (track_thinker_grad) {
      hidden = thinker_text_hidden(*thinker, u);
    } else {
      NoGradGuard no_grad;
      hidden = thinker_text_hidden(*thinker, u);
    }
    const FusedSteps fused = fuse(fusion, u.text, hidden);
    const TalkerOutput output = talker_forward(talker, upsample_schedule(fused, inputs.size(), corpus.factor), inputs);
    losses.push_back(talker_loss(output, targets, talker.config).objective);
    const auto& logits = output.logits.front();
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t v = logits[j].cols();
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto row = logits[j].data().subspan(i * v, v);
        const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
        out.hits[j] += best == targets[i + 1].tokens[j];
        ++out.total[j];
      }
    }
  }
  out.objective = mean_of(losses);
  return out;
}

std::vector<double> ratios(const std::vector<std::size_t>& hits, const std::vector<std::size_t>& total) {
  std::vector<double> out;
  for (std::size_t j = 0; j < hits.size(); ++j) out.push_back(total[j] ? double(hits[j]) / double(total[j]) : 0.0);
  return out;
}

bool reached(double loss, const std::vector<double>& accuracy, const TrainOptions& o) {
  if (o.stop_loss <= 0.0 || !(loss < o.stop_loss)) return false;
  return std::all_of(accuracy.begin(), accuracy.end(), [&](double a) { return a >= o.stop_accuracy; });
}

void check_finite(double loss, std::size_t step, std::string_view stage) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::kNaN, std::string(stage) + " loss is not finite at step " + std::to_string(step));
  }
}

// Sequence [BOS, prompt, text, EOS]; loss on text and EOS targets only.
struct ThinkerSequence {
  std::vector<TokenId> inputs, targets;
};

ThinkerSequence thinker_sequence(const Utterance& u, TokenId ignore) {
  std::vector<TokenId> seq = thinker_prompt(u);
  seq.insert(seq.end(), u.text.begin(), u.text.end());
  seq.push_back(kEos);
  ThinkerSequence s;
  s.inputs.assign(seq.begin(), seq.end() - 1);
  for (std::size_t i = 1; i < seq.size(); ++i) s.targets.push_back(i <= u.prompt.size() ? ignore : seq[i]);
  return s;
}

Tensor thinker_batch(const ThinkerParams& thinker, const Corpus& corpus, std::size_t* hits, std::size_t* total) {
  const TokenId ignore = thinker.config.vocab;
  std::vector<Tensor> losses;
  for (const auto& u : corpus.utterances) {
    const ThinkerSequence s = thinker_sequence(u, ignore);
    const ThinkerOutput out = thinker_forward(thinker, s.inputs);
    losses.push_back(cross_entropy(out.logits, s.targets, ignore));
    if (hits) {
      const std::size_t v = thinker.config.vocab;
      for (std::size_t i = 0; i < s.targets.size(); ++i) {
        if (s.targets[i] == ignore) continue;
        const auto row = out.logits.data().subspan(i * v, v);
        *hits += static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()) == s.targets[i];
        ++*total;
      }
    }
  }
  return mean_of(losses);
}

std::vector<Tensor> talker_side_params(const FusionParams& fusion, const TalkerParams& talker) {
  NamedTensors named = talker.named();
  fusion.collect("fusion", named);
  return parameter_tensors(named);
}

}  // namespace

Tensor thinker_text_hidden(const ThinkerParams& thinker, const Utterance& u) {
  std::vector<TokenId> seq = thinker_prompt(u);
  const std::size_t first = seq.size() - 1;
  seq.insert(seq.end(), u.text.begin(), u.text.end() - 1);
  const ThinkerOutput out = thinker_forward(thinker, seq);
  return slice_rows(out.hidden, first, first + u.text.size());
}

TalkerEval evaluate_talker(const FusionParams& fusion, const TalkerParams& talker, const Corpus& corpus,
                           HiddenSource source, const ThinkerParams* thinker) {
  check_corpus(corpus);
  NoGradGuard no_grad;
  const TalkerBatchLoss b = talker_batch(fusion, talker, corpus, source, thinker, false);
  return {b.objective.item(), ratios(b.hits, b.total)};
}

double evaluate_thinker(const ThinkerParams& thinker, const Corpus& corpus, std::vector<double>* accuracy) {
  check_corpus(corpus);
  NoGradGuard no_grad;
  std::size_t hits = 0, total = 0;
  const double loss = thinker_batch(thinker, corpus, &hits, &total).item();
  if (accuracy) *accuracy = {total ? double(hits) / double(total) : 0.0};
  return loss;
}

TrainReport train_talker_tts(FusionParams& fusion, TalkerParams& talker, const Corpus& corpus,
                             const TrainOptions& options) {
  check_corpus(corpus);
  const auto start = std::chrono::steady_clock::now();
  Adam opt(talker_side_params(fusion, talker), {.learning_rate = options.learning_rate, .clip_norm = options.clip_norm});
  TrainReport report;
  for (std::size_t step = 0; step < options.steps; ++step) {
    opt.zero_grad();
    const TalkerBatchLoss b = talker_batch(fusion, talker, corpus, HiddenSource::kZeros, nullptr, false);
    const double loss = b.objective.item();
    check_finite(loss, step, "talker_tts");
    report.loss_curve.push_back(loss);
    if (reached(loss, ratios(b.hits, b.total), options)) break;
    backward(b.objective);
    opt.step();
  }
  report.steps = static_cast<std::size_t>(opt.steps_taken());
  const TalkerEval eval = evaluate_talker(fusion, talker, corpus, HiddenSource::kZeros);
  report.final_loss = eval.objective;
  report.accuracy = eval.accuracy;
  report.seconds = seconds_since(start);
  return report;
}

TrainReport train_thinker_text(ThinkerParams& thinker, const Corpus& corpus, const TrainOptions& options) {
  check_corpus(corpus);
  const auto start = std::chrono::steady_clock::now();
  Adam opt(parameter_tensors(thinker.named()),
           {.learning_rate = options.learning_rate, .clip_norm = options.clip_norm});
  TrainReport report;
  for (std::size_t step = 0; step < options.steps; ++step) {
    opt.zero_grad();
    std::size_t hits = 0, total = 0;
    const Tensor loss = thinker_batch(thinker, corpus, &hits, &total);
    check_finite(loss.item(), step, "thinker_text");
    report.loss_curve.push_back(loss.item());
    if (reached(loss.item(), {double(hits) / double(total)}, options)) break;
    backward(loss);
    opt.step();
  }
  report.steps = static_cast<std::size_t>(opt.steps_taken());
  report.final_loss = evaluate_thinker(thinker, corpus, &report.accuracy);
  report.seconds = seconds_since(start);
  return report;
}

TrainReport train_end_to_end(ThinkerParams& thinker, FusionParams& fusion, TalkerParams& talker, const Corpus& corpus,
                             const TrainOptions& options) {
  check_corpus(corpus);
  const auto start = std::chrono::steady_clock::now();
  std::vector<Tensor> params = talker_side_params(fusion, talker);
  if (options.unfreeze_thinker) {
    for (auto& t : parameter_tensors(thinker.named())) params.push_back(t);
  }
  Adam opt(params, {.learning_rate = options.learning_rate, .clip_norm = options.clip_norm});
  TrainReport report;
  for (std::size_t step = 0; step < options.steps; ++step) {
    opt.zero_grad();
    const TalkerBatchLoss b =
        talker_batch(fusion, talker, corpus, HiddenSource::kThinker, &thinker, options.unfreeze_thinker);
    Tensor objective = b.objective;
    // An unfrozen thinker keeps its own text loss so its tokens stay put.
    if (options.unfreeze_thinker) objective = add(objective, thinker_batch(thinker, corpus, nullptr, nullptr));
    check_finite(objective.item(), step, "end_to_end");
    report.loss_curve.push_back(objective.item());
    if (reached(b.objective.item(), ratios(b.hits, b.total), options)) break;
    backward(objective);
    opt.step();
  }
  report.steps = static_cast<std::size_t>(opt.steps_taken());
  const TalkerEval eval = evaluate_talker(fusion, talker, corpus, HiddenSource::kThinker, &thinker);
  report.final_loss = eval.objective;
  report.accuracy = eval.accuracy;
  report.seconds = seconds_since(start);
  return report;
}

void write_loss_curve(const std::string& path, const std::vector<double>& curve) {
  std::ofstream out(path);
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

}  // namespace tforge
