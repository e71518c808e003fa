// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/pipeline.hpp"

#include <chrono>
#include <limits>
#include <mutex>
#include <thread>

#include "tforge/error.hpp"
#include "tforge/queue.hpp"

namespace tforge {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Stand-in for a flow-matching model: costs time, changes nothing.
void busy_wait(double ms) {
  const auto end = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::milli>(ms));
  while (Clock::now() < end) {
  }
}

class FailureSlot {
 public:
  void record(const char* stage, const std::exception& e) {
    std::lock_guard lock(mutex_);
    if (failed_) return;
    failed_ = true;
    stage_ = stage;
    what_ = e.what();
  }
  void rethrow() const {
    if (failed_) throw Error(ErrorKind::kPipeline, "stage '" + stage_ + "' failed: " + what_);
  }

 private:
  std::mutex mutex_;
  bool failed_ = false;
  std::string stage_, what_;
};

struct Run {
  PipelineResult content;
  StageTimes first;
  std::vector<ChunkEvent> chunks;
  std::size_t first_calls = 0;
  std::size_t first_tokens = 0;
};

Run run_once(const Models& m, const Settings& s, const std::vector<TokenId>& prompt) {
  const auto& p = s.pipeline;
  const std::size_t factor = s.factor();
  const std::size_t first_frames = p.chunks.first_frames(m.codec.frame_rate);
  const std::size_t chunk_frames = p.chunks.chunk_frames(m.codec.frame_rate);
  const std::size_t start_tokens = p.start_tokens ? p.start_tokens : text_needed_for(first_frames, factor);
  const GenerateOptions gen = s.generate_options();
  const std::size_t width = m.talker.config.width;

  BoundedQueue<ThinkerToken> text_queue(p.queue_capacity);
  BoundedQueue<CodebookFrame> frame_queue(p.queue_capacity);
  FailureSlot failure;
  Run run;
  const auto start = Clock::now();

  // Thinker: cumulative busy time after each emitted token.
  std::vector<double> thinker_busy_at;
  double thinker_busy = 0.0;
  std::thread thinker([&] {
    try {
      auto t0 = Clock::now();
      ThinkerSession session(m.thinker, prompt, s.decode.max_text_tokens);
      thinker_busy += ms_between(t0, Clock::now());
      while (true) {
        t0 = Clock::now();
        std::optional<ThinkerToken> token = session.next();
        thinker_busy += ms_between(t0, Clock::now());
        if (!token) break;
        thinker_busy_at.push_back(thinker_busy);
        run.content.text.push_back(token->token);
        if (!text_queue.push(std::move(*token))) break;
      }
    } catch (const std::exception& e) {
      failure.record("thinker", e);
      frame_queue.close();
    }
    text_queue.close();
  });

  bool first_waited_for_all_text = false;
  std::thread talker([&] {
    try {
      NoGradGuard no_grad;
      double busy = 0.0;
      FusedSteps fused{Tensor(), width};
      std::size_t consumed = 0;
      bool text_done = false;
      auto take_until = [&](std::size_t need) {
        while (!text_done && consumed < need) {
          std::optional<ThinkerToken> token = text_queue.pop();
          if (!token) {
            text_done = true;
            break;
          }
          const auto t0 = Clock::now();
          const TokenId id[] = {token->token};
          const Tensor hidden = Tensor::from({1, token->hidden.size()}, token->hidden);
          fused = append_fused(fused, fuse(m.fusion, id, hidden));
          busy += ms_between(t0, Clock::now());
          ++consumed;
        }
      };
      bool first_done = false;
      auto mark_first = [&] {
        if (first_done) return;
        first_done = true;
        run.first.talker = busy;
        run.first_calls = run.content.backbone_calls;
        run.first_tokens = consumed;
        first_waited_for_all_text = text_done;
      };

      if (!p.overlap) take_until(std::numeric_limits<std::size_t>::max());
      take_until(start_tokens);
      DecodeSession session(m.talker, gen.session);
      auto& frames = run.content.frames;
      while (frames.size() < gen.max_frames && !session.closed() && !session.pending().empty()) {
        const std::size_t need = text_needed_for(session.pending_end(), factor);
        take_until(need);
        if (gen.underrun == Underrun::kStall && consumed < need) {
          run.content.underrun = true;
          break;
        }
        const auto t0 = Clock::now();
        const UpsampledContext ctx = upsample_range(fused, session.processed(), session.pending_end(), factor);
        StepResult step = decode_step(m.talker, session, ctx, gen.mode);
        busy += ms_between(t0, Clock::now());
        ++run.content.backbone_calls;
        bool open = true;
        for (auto& f : step.frames) {
          if (frames.size() == gen.max_frames) break;
          frames.push_back(f);
          if (!frame_queue.push(std::move(f))) {
            open = false;
            break;
          }
        }
        if (!open) break;
        if (frames.size() >= first_frames) mark_first();
      }
      mark_first();  // a short utterance's only chunk is the flushed remainder
      // Let the thinker finish its text so the transcript never depends on timing.
      while (text_queue.pop()) {
      }
    } catch (const std::exception& e) {
      failure.record("talker", e);
      text_queue.close();
    }
    frame_queue.close();
  });

  std::thread vocoder([&] {
    try {
      std::vector<CodebookFrame> chunk;
      auto flush = [&] {
        const auto t0 = Clock::now();
        std::vector<double> pcm = render_frames(m.codec, chunk, p.sample_rate);
        if (p.vocoder == VocoderProfile::kFlowMatchingProxy) busy_wait(p.flow_proxy_ms);
        const auto t1 = Clock::now();
        auto& samples = run.content.samples;
        samples.insert(samples.end(), pcm.begin(), pcm.end());
        run.content.rendered_frames += chunk.size();
        if (run.chunks.empty()) {
          run.first.vocoder = ms_between(t0, t1);
          run.first.total = ms_between(start, t1);
        }
        run.chunks.push_back({run.chunks.size(), chunk.size(), ms_between(start, t1)});
        chunk.clear();
      };
      while (std::optional<CodebookFrame> f = frame_queue.pop()) {
        chunk.push_back(std::move(*f));
        if (chunk.size() == (run.chunks.empty() ? first_frames : chunk_frames)) flush();
      }
      if (!chunk.empty()) flush();
      if (run.chunks.empty()) run.first.total = ms_between(start, Clock::now());
    } catch (const std::exception& e) {
      failure.record("vocoder", e);
      frame_queue.close();
      text_queue.close();
    }
  });

  thinker.join();
  talker.join();
  vocoder.join();
  failure.rethrow();

  const std::size_t k = run.first_tokens;
  // Thinker work the first chunk actually waited for.
  run.first.thinker = first_waited_for_all_text ? thinker_busy : (k ? thinker_busy_at[k - 1] : 0.0);
  run.first.residual = run.first.total - run.first.thinker - run.first.talker - run.first.vocoder;
  return run;
}

bool same_content(const PipelineResult& a, const PipelineResult& b) {
  return a.text == b.text && a.frames == b.frames && a.samples == b.samples &&
         a.backbone_calls == b.backbone_calls && a.underrun == b.underrun;
}

}  // namespace

std::vector<double> render_frames(const CodecModel& codec, std::span<const CodebookFrame> frames,
                                  std::uint32_t sample_rate) {
  if (frames.empty()) return {};
  const std::vector<CodebookFrame> codes = tokens_to_codes(frames);
  return synth_waveform(rvq_decode(codec, codes), codec.frame_rate, static_cast<double>(sample_rate));
}

std::vector<TokenId> request_prompt(const Settings& settings, const Corpus* corpus) {
  if (!settings.pipeline.prompt.empty()) {
    std::vector<TokenId> p{kBos};
    p.insert(p.end(), settings.pipeline.prompt.begin(), settings.pipeline.prompt.end());
    return p;
  }
  if (!corpus) throw Error(ErrorKind::kStaging, "no pipeline.prompt configured and no corpus loaded");
  if (settings.pipeline.utterance >= corpus->utterances.size()) {
    throw Error(ErrorKind::kConfig, "pipeline.utterance " + std::to_string(settings.pipeline.utterance) +
                                        " out of range for a corpus of " +
                                        std::to_string(corpus->utterances.size()));
  }
  return thinker_prompt(corpus->utterances[settings.pipeline.utterance]);
}

PipelineResult run_pipeline(const Models& models, const Settings& settings, const std::vector<TokenId>& prompt) {
  PipelineResult result;
  LatencyReport& report = result.report;
  for (std::size_t r = 0; r < settings.pipeline.repetitions; ++r) {
    Run run = run_once(models, settings, prompt);
    if (r == 0) {
      LatencyReport keep = std::move(report);
      result = std::move(run.content);
      report = std::move(keep);
      report.backbone_calls = run.first_calls;
      report.text_tokens = run.first_tokens;
    } else if (!same_content(result, run.content) || run.first_calls != report.backbone_calls) {
      throw Error(ErrorKind::kDeterminism, "repetition " + std::to_string(r) + " produced different content");
    }
    report.repetitions.push_back(run.first);
    report.chunks = std::move(run.chunks);
  }
  report.source = "live";
  report.mode = std::string(to_string(settings.decode.mode));
  report.mtp_layers = settings.decode.mode == DecodeMode::kMtp ? models.talker.config.mtp_layers : 0;
  report.vocoder = std::string(to_string(settings.pipeline.vocoder));
  report.seed = settings.seed;
  report.first_chunk_frames = settings.pipeline.chunks.first_frames(models.codec.frame_rate);
  report.underrun = result.underrun;
  return result;
}

PipelineResult run_offline(const Models& models, const Settings& settings, const std::vector<TokenId>& prompt) {
  PipelineResult result;
  const std::vector<ThinkerToken> tokens = thinker_generate(models.thinker, prompt, settings.decode.max_text_tokens);
  FusedSteps fused{Tensor(), models.talker.config.width};
  if (!tokens.empty()) {
    std::vector<double> hidden;
    for (const auto& t : tokens) {
      result.text.push_back(t.token);
      hidden.insert(hidden.end(), t.hidden.begin(), t.hidden.end());
    }
    NoGradGuard no_grad;
    fused = fuse(models.fusion, result.text, Tensor::from({tokens.size(), tokens.front().hidden.size()}, hidden));
  }
  GenerateResult g = generate(models.talker, fused, settings.generate_options());
  result.frames = std::move(g.frames);
  result.backbone_calls = g.trace.backbone_calls();
  result.underrun = g.underrun;
  result.samples = render_frames(models.codec, result.frames, settings.pipeline.sample_rate);
  result.rendered_frames = result.frames.size();
  return result;
}

}  // namespace tforge
