// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "tforge/error.hpp"
#include "tforge/optim.hpp"
#include "tforge/talker.hpp"

using namespace tforge;
using tforge::testing::bit_equal;
using tforge::testing::max_abs_diff;

namespace {

TalkerConfig tiny(std::size_t codebooks, std::size_t vocab, std::size_t width, std::size_t mtp) {
  TalkerConfig c;
  c.codebooks = codebooks;
  c.vocab = vocab;
  c.width = width;
  c.heads = 2;
  c.backbone_layers = 2;
  c.mtp_layers = mtp;
  c.max_positions = 96;
  return c;
}

// Parameters with every tensor jittered, so no layer norm sits at its init.
TalkerParams random_talker(const TalkerConfig& c, std::uint64_t seed, double jitter = 0.1) {
  Rng rng(seed);
  TalkerParams p = TalkerParams::init(c, rng);
  for (auto& [name, t] : p.named()) {
    for (auto& v : t.mutable_data()) v += jitter * rng.normal();
  }
  return p;
}

FusedSteps random_text(std::size_t n, std::size_t width, Rng& rng) {
  if (n == 0) return {Tensor(), width};
  return {Tensor::randn({n, width}, rng), width};
}

std::vector<CodebookFrame> random_frames(std::size_t t, const TalkerConfig& c, Rng& rng) {
  std::vector<CodebookFrame> frames{CodebookFrame::filled(c.codebooks, kBos)};
  while (frames.size() < t) {
    CodebookFrame f;
    for (std::size_t j = 0; j < c.codebooks; ++j) f.tokens.push_back(2 + rng.below(c.vocab - 2));
    frames.push_back(f);
  }
  return frames;
}

double log_softmax_at(std::span<const double> row, std::size_t target) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  return row[target] - mx - std::log(z);
}

TokenId argmax(std::span<const double> row) {
  return static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

TEST_CASE("zero parameters give uniform logits") {
  const TalkerConfig c = tiny(2, 4, 4, 0);
  const TalkerParams p = TalkerParams::zeros(c);
  Rng rng(1);
  const auto frames = random_frames(5, c, rng);
  const UpsampledContext ctx = upsample_schedule(FusedSteps{Tensor(), 4}, 5);
  const TalkerOutput out = talker_forward(p, ctx, frames);
  for (const auto& l : out.logits[0])
    for (double v : l.data()) CHECK(v == 0.0);
  const TalkerLoss loss = talker_loss(out, frames, c);
  CHECK(loss.objective.item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  for (double m : loss.mean_nll[0]) CHECK(m == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("uniform logits over 1024 entries give ln 1024 per codebook") {
  TalkerConfig c = tiny(8, 1024, 8, 0);
  const std::size_t m = 7;
  TalkerOutput out;
  out.logits.emplace_back();
  for (std::size_t j = 0; j < 8; ++j) out.logits[0].push_back(Tensor::zeros({m, 1024}));
  Rng rng(2);
  const auto frames = random_frames(m + 1, c, rng);
  const TalkerLoss loss = talker_loss(out, frames, c);
  CHECK(loss.positions[0] == m);
  for (double v : loss.mean_nll[0]) CHECK(v == doctest::Approx(std::log(1024.0)).epsilon(1e-14));
  CHECK(loss.total.item() == doctest::Approx(8.0 * m * std::log(1024.0)).epsilon(1e-14));
}

TEST_CASE("single-stage loss equals a direct per-codebook cross-entropy sum") {
  Rng rng(3);
  TalkerConfig c = tiny(3, 11, 8, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t t = 2 + rng.below(8);
    TalkerOutput out;
    out.logits.emplace_back();
    for (std::size_t j = 0; j < 3; ++j) out.logits[0].push_back(Tensor::randn({t, 11}, rng, 3.0));
    const auto frames = random_frames(t + rng.below(3), c, rng);
    double direct = 0.0;
    for (std::size_t i = 0; i + 1 < frames.size() && i < t; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const auto row = out.logits[0][j].data().subspan(i * 11, 11);
        direct -= log_softmax_at(row, frames[i + 1].tokens[j]);
      }
    }
    CHECK(std::abs(talker_loss(out, frames, c).total.item() - direct) < 1e-10);
  }
}

TEST_CASE("stage masking matches index enumeration") {
  Rng rng(4);
  const std::size_t stages = 5, C = 2, V = 6;
  TalkerConfig c = tiny(C, V, 8, stages - 1);
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t rows = 1; rows <= m; ++rows) {
      TalkerOutput out;
      for (std::size_t s = 0; s < stages; ++s) {
        out.logits.emplace_back();
        for (std::size_t j = 0; j < C; ++j) out.logits[s].push_back(Tensor::randn({rows, V}, rng));
      }
      const auto frames = random_frames(m, c, rng);
      double expect = 0.0;
      std::vector<std::size_t> count(stages, 0);
      for (std::size_t s = 0; s < stages; ++s) {
        for (std::size_t i = 0; i < rows; ++i) {
          if (i + s + 1 >= m) continue;
          ++count[s];
          for (std::size_t j = 0; j < C; ++j) {
            expect -= log_softmax_at(out.logits[s][j].data().subspan(i * V, V), frames[i + s + 1].tokens[j]);
          }
        }
      }
      if (count[0] == 0) {
        CHECK_THROWS_AS(talker_loss(out, frames, c), Error);
        continue;
      }
      const TalkerLoss loss = talker_loss(out, frames, c);
      CHECK(loss.positions == count);
      CHECK(std::abs(loss.total.item() - expect) < 1e-10);
    }
  }
}

TEST_CASE("multi-stage loss is at least its first-stage part") {
  Rng rng(5);
  const TalkerConfig c = tiny(2, 6, 8, 3);
  const TalkerParams p = random_talker(c, 5);
  const auto frames = random_frames(9, c, rng);
  const FusedSteps text = random_text(3, 8, rng);
  const TalkerOutput out = talker_forward(p, upsample_schedule(text, 9), frames);
  const TalkerLoss all = talker_loss(out, frames, c);
  TalkerOutput first = out;
  first.logits.resize(1);
  TalkerConfig c0 = c;
  c0.mtp_layers = 0;
  const TalkerLoss base = talker_loss(first, frames, c0);
  CHECK(all.total.item() >= base.total.item());
}

TEST_CASE("talker forward is causal at every stage") {
  const TalkerConfig c = tiny(3, 9, 8, 2);
  const TalkerParams p = random_talker(c, 6);
  Rng rng(6);
  const std::size_t t = 7;
  const auto frames = random_frames(t, c, rng);
  const FusedSteps text = random_text(3, 8, rng);
  const UpsampledContext ctx = upsample_schedule(text, t);
  const TalkerOutput base = talker_forward(p, ctx, frames);
  for (std::size_t k = 1; k < t; ++k) {
    for (std::size_t j = 0; j < c.codebooks; ++j) {
      auto changed = frames;
      changed[k].tokens[j] = 2 + (changed[k].tokens[j] - 1) % (c.vocab - 2);
      const TalkerOutput out = talker_forward(p, ctx, changed);
      for (std::size_t s = 0; s < c.stages(); ++s) {
        for (std::size_t q = 0; q < c.codebooks; ++q) {
          CHECK(bit_equal(out.logits[s][q].data().subspan(0, k * c.vocab),
                          base.logits[s][q].data().subspan(0, k * c.vocab)));
        }
      }
    }
  }
}

TEST_CASE("later stages compose the backbone with the first n extra layers") {
  const TalkerConfig c = tiny(2, 7, 8, 2);
  const TalkerParams p = random_talker(c, 7);
  Rng rng(7);
  const std::size_t t = 6;
  const auto frames = random_frames(t, c, rng);
  const UpsampledContext ctx = upsample_schedule(random_text(2, 8, rng), t);
  const TalkerOutput out = talker_forward(p, ctx, frames);
  const Tensor x = talker_input(p, ctx.vectors, frames, 0);
  for (std::size_t n = 0; n <= 2; ++n) {
    std::vector<DecoderLayerParams> deep = p.backbone;
    deep.insert(deep.end(), p.mtp.begin(), p.mtp.begin() + static_cast<std::ptrdiff_t>(n));
    const Tensor h = decoder_stack(deep, x);
    for (std::size_t j = 0; j < 2; ++j) {
      const Tensor logits = p.head_banks[n][j](p.stage_norms[n](h));
      CHECK(bit_equal(logits.data(), out.logits[n][j].data()));
    }
  }
}

TEST_CASE("permuting codebook tables and heads permutes the logits") {
  const TalkerConfig c = tiny(4, 9, 8, 1);
  const TalkerParams p = random_talker(c, 8);
  Rng rng(8);
  const auto frames = random_frames(6, c, rng);
  const UpsampledContext ctx = upsample_schedule(random_text(2, 8, rng), 6);
  const TalkerOutput base = talker_forward(p, ctx, frames);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  TalkerParams q = p;
  auto moved = frames;
  for (std::size_t j = 0; j < 4; ++j) {
    q.codebook_embeddings[j] = p.codebook_embeddings[perm[j]];
    for (std::size_t s = 0; s < c.stages(); ++s) q.head_banks[s][j] = p.head_banks[s][perm[j]];
    for (std::size_t i = 0; i < frames.size(); ++i) moved[i].tokens[j] = frames[i].tokens[perm[j]];
  }
  const TalkerOutput out = talker_forward(q, ctx, moved);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(max_abs_diff(out.logits[0][j].data(), base.logits[0][perm[j]].data()) < 1e-12);
  }
}

TEST_CASE("talker forward input contracts") {
  const TalkerConfig c = tiny(2, 5, 8, 1);
  const TalkerParams p = random_talker(c, 9);
  Rng rng(9);
  auto frames = random_frames(4, c, rng);
  const UpsampledContext ctx = upsample_schedule(random_text(2, 8, rng), 4);
  const UpsampledContext short_ctx = upsample_schedule(random_text(2, 8, rng), 3);
  auto kind = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  CHECK(kind([&] { talker_forward(p, short_ctx, frames); }) == ErrorKind::kAlignment);
  auto bad = frames;
  bad[2].tokens.push_back(3);
  CHECK(kind([&] { talker_forward(p, ctx, bad); }) == ErrorKind::kArity);
  auto no_bos = frames;
  no_bos[0].tokens[0] = 3;
  CHECK(kind([&] { talker_forward(p, ctx, no_bos); }) == ErrorKind::kContract);
  auto oov = frames;
  oov[1].tokens[1] = 5;
  CHECK(kind([&] { talker_forward(p, ctx, oov); }) == ErrorKind::kVocabulary);
}

TEST_CASE("talker loss gradients with two codebooks and two extra stages") {
  TalkerConfig c = tiny(2, 6, 8, 2);
  c.max_positions = 6;
  const TalkerParams p = random_talker(c, 10);
  Rng rng(10);
  const auto frames = random_frames(4, c, rng);
  const UpsampledContext ctx = upsample_schedule(random_text(2, 8, rng), 4);
  const double err = grad_check_leaves([&] { return talker_loss(talker_forward(p, ctx, frames), frames, c).objective; },
                                       parameter_tensors(p.named()));
  CHECK(err < 1e-4);
}

TEST_CASE("shared heads appear once in the parameter list") {
  TalkerConfig c = tiny(2, 6, 8, 2);
  c.share_heads = true;
  Rng rng(11);
  const TalkerParams p = TalkerParams::init(c, rng);
  std::size_t heads = 0;
  for (const auto& [name, t] : p.named()) heads += name.find(".head.") != std::string::npos;
  CHECK(heads == 2 * 2);  // weight and bias of each codebook's head
  CHECK(p.head_banks[2][1].weight.node() == p.head_banks[0][1].weight.node());
}

TEST_CASE("mtp step emits one frame per stage") {
  const TalkerConfig c = tiny(2, 8, 8, 4);
  const TalkerParams p = random_talker(c, 12);
  Rng rng(12);
  const FusedSteps text = random_text(4, 8, rng);
  DecodeSession s(p, {.stop_at_eos = false});
  for (int call = 0; call < 3; ++call) {
    const UpsampledContext ctx = upsample_range(text, s.processed(), s.pending_end());
    const StepResult r = decode_step(p, s, ctx, DecodeMode::kMtp);
    CHECK(r.frames.size() == 5);
    CHECK(r.positions == (call == 0 ? 1u : 5u));
  }
  CHECK(s.backbone_calls() == 3);
  CHECK(s.processed() == 11);
}

TEST_CASE("stepping a closed session fails") {
  const TalkerConfig c = tiny(2, 8, 8, 1);
  TalkerParams p = random_talker(c, 13);
  p.head_banks[0][0].bias.mutable_data()[kEos] = 100.0;
  const FusedSteps text{Tensor(), 8};
  DecodeSession s(p);
  const StepResult r = decode_step(p, s, upsample_range(text, 0, 1), DecodeMode::kBackboneOnly);
  CHECK(r.reached_eos);
  CHECK(r.frames.empty());
  CHECK(s.closed());
  try {
    decode_step(p, s, upsample_range(text, 0, 0), DecodeMode::kBackboneOnly);
    FAIL("expected session-closed error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSessionClosed);
  }
  const GenerateResult g = generate(p, text, {.max_frames = 8});
  CHECK(g.frames.empty());
  CHECK(g.reached_eos);
}

TEST_CASE("streamed decode matches full recomputation") {
  const TalkerConfig c = tiny(3, 10, 16, 2);
  const TalkerParams p = random_talker(c, 14, 0.3);
  Rng rng(14);
  for (auto mode : {DecodeMode::kBackboneOnly, DecodeMode::kMtp}) {
    const FusedSteps text = random_text(5, 16, rng);
    DecodeSession s(p, {.stop_at_eos = false});
    std::vector<CodebookFrame> history{CodebookFrame::filled(3, kBos)};
    double worst = 0.0;
    while (history.size() < 20) {
      const UpsampledContext ctx = upsample_range(text, s.processed(), s.pending_end());
      const StepResult r = decode_step(p, s, ctx, mode);
      // The full pass sees every frame known so far, ending at the newest input.
      const TalkerOutput full = talker_forward(p, upsample_schedule(text, history.size()), history);
      const std::size_t last = history.size() - 1;
      for (std::size_t st = 0; st < r.logits.size(); ++st) {
        CodebookFrame expect;
        for (std::size_t j = 0; j < 3; ++j) {
          const auto row = full.logits[st][j].data().subspan(last * 10, 10);
          worst = std::max(worst, max_abs_diff(r.logits[st][j].data(), row));
          expect.tokens.push_back(argmax(row));
        }
        CHECK(expect == r.frames[st]);
      }
      history.insert(history.end(), r.frames.begin(), r.frames.end());
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("backbone call counts follow the step-count law") {
  for (std::size_t n = 0; n <= 5; ++n) {
    const TalkerConfig c = tiny(2, 6, 8, n);
    const TalkerParams p = random_talker(c, 15 + n);
    Rng rng(15);
    const FusedSteps text = random_text(8, 8, rng);
    for (std::size_t m = 1; m <= 64; m += (m < 12 ? 1 : 7)) {
      GenerateOptions o{.max_frames = m, .mode = DecodeMode::kMtp, .session = {.stop_at_eos = false}};
      const GenerateResult mtp = generate(p, text, o);
      CHECK(mtp.frames.size() == m);
      CHECK(mtp.trace.backbone_calls() == (m + n) / (n + 1));
      o.mode = DecodeMode::kBackboneOnly;
      const GenerateResult plain = generate(p, text, o);
      CHECK(plain.trace.backbone_calls() == m);
      CHECK(plain.frames.front() == mtp.frames.front());
    }
  }
}

TEST_CASE("generate basics") {
  const TalkerConfig c = tiny(2, 8, 8, 2);
  const TalkerParams p = random_talker(c, 16);
  Rng rng(16);
  const FusedSteps text = random_text(3, 8, rng);
  const GenerateResult one = generate(p, text, {.max_frames = 1});
  CHECK(one.frames.size() == 1);
  CHECK(one.trace.backbone_calls() == 1);
  CHECK_THROWS_AS(generate(p, text, {.max_frames = 0}), Error);

  GenerateOptions sampled{.max_frames = 20, .session = {.sampling = {.temperature = 1.0, .top_k = 4, .seed = 5},
                                                        .stop_at_eos = false}};
  const GenerateResult a = generate(p, text, sampled);
  const GenerateResult b = generate(p, text, sampled);
  CHECK(a.frames == b.frames);

  const GenerateResult stall = generate(p, text, {.max_frames = 30, .mode = DecodeMode::kBackboneOnly,
                                                  .underrun = Underrun::kStall, .session = {.stop_at_eos = false}});
  CHECK(stall.underrun);
  // Three text tokens fix positions 0..8, enough inputs for nine frames.
  CHECK(stall.frames.size() == 9);
}

TEST_CASE("greedy decode of an overfit model reproduces its sequence") {
  TalkerConfig c = tiny(2, 8, 16, 1);
  c.backbone_layers = 1;
  c.max_positions = 16;
  Rng rng(17);
  TalkerParams p = TalkerParams::init(c, rng);
  const FusedSteps text = random_text(4, 16, rng);
  auto frames = random_frames(13, c, rng);
  frames.push_back(CodebookFrame::filled(2, kEos));
  const std::vector<CodebookFrame> inputs(frames.begin(), frames.end() - 1);
  const UpsampledContext ctx = upsample_schedule(text, inputs.size());
  Adam opt(parameter_tensors(p.named()), {.learning_rate = 1e-2});
  for (int step = 0; step < 300; ++step) {
    opt.zero_grad();
    const TalkerLoss loss = talker_loss(talker_forward(p, ctx, inputs), frames, c);
    backward(loss.objective);
    opt.step();
  }
  const TalkerOutput out = talker_forward(p, ctx, inputs);
  for (double a : teacher_forced_accuracy(out, frames)) CHECK(a == 1.0);
  const GenerateResult g = generate(p, text, {.max_frames = 40, .mode = DecodeMode::kBackboneOnly});
  CHECK(g.reached_eos);
  REQUIRE(g.frames.size() == 12);
  CHECK(std::equal(g.frames.begin(), g.frames.end(), frames.begin() + 1));
  const GenerateResult m = generate(p, text, {.max_frames = 40, .mode = DecodeMode::kMtp});
  CHECK(m.frames.front() == g.frames.front());
}

TEST_CASE("token stream text format") {
  std::vector<CodebookFrame> frames{{{0, 0, 0}}, {{5, 17, 1023}}, {{1, 1, 1}}};
  std::stringstream ss;
  write_token_stream(ss, frames);
  CHECK(ss.str() == "0 0 0\n5 17 1023\n1 1 1\n");
  CHECK(read_token_stream(ss) == frames);
  std::stringstream ragged("1 2 3\n4 5\n");
  CHECK_THROWS_AS(read_token_stream(ragged), Error);
  std::stringstream junk("1 x 3\n");
  CHECK_THROWS_AS(read_token_stream(junk), Error);
  std::stringstream negative("1 -2 3\n");
  CHECK_THROWS_AS(read_token_stream(negative), Error);
  std::stringstream arity("1 2 3\n");
  CHECK_THROWS_AS(read_token_stream(arity, 8), Error);
}

TEST_CASE("decode mode names") {
  CHECK(parse_decode_mode("mtp") == DecodeMode::kMtp);
  CHECK(parse_decode_mode(to_string(DecodeMode::kBackboneOnly)) == DecodeMode::kBackboneOnly);
  CHECK_THROWS_AS(parse_decode_mode("fast"), Error);
}
