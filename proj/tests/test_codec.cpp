// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "tforge/codec.hpp"
#include "tforge/error.hpp"
#include "tforge/wav.hpp"

using namespace tforge;

namespace {

std::vector<FeatureFrame> random_frames(std::size_t n, std::size_t width, Rng& rng, double scale = 1.0) {
  std::vector<FeatureFrame> out(n, FeatureFrame(width));
  for (auto& f : out)
    for (auto& v : f) v = scale * rng.normal();
  return out;
}

std::vector<CodebookFrame> single(std::vector<TokenId> tokens) { return {CodebookFrame{std::move(tokens)}}; }

double norm(const FeatureFrame& f) { return std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0)); }

// Independent greedy reference: residual kept as an explicit list of
// subtracted entries, distances recomputed from scratch.
CodebookFrame reference_encode(const CodecModel& m, const FeatureFrame& f) {
  CodebookFrame codes;
  for (std::size_t j = 0; j < m.num_codebooks(); ++j) {
    FeatureFrame r = f;
    for (std::size_t k = 0; k < j; ++k)
      for (std::size_t i = 0; i < r.size(); ++i) r[i] -= m.codebooks[k].at(codes.tokens[k], i);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t v = 0; v < m.entries(); ++v) {
      double d = 0;
      for (std::size_t i = 0; i < r.size(); ++i) d += std::pow(r[i] - m.codebooks[j].at(v, i), 2);
      if (d < best_d) best_d = d, best = v;
    }
    codes.tokens.push_back(best);
  }
  return codes;
}

}  // namespace

TEST_CASE("encoding edge cases") {
  Rng rng(1);
  const CodecModel m = CodecModel::random(4, 16, 6, 1.0, rng);
  const std::vector<FeatureFrame> zero{FeatureFrame(6, 0.0)};
  CHECK(rvq_encode(m, zero).front() == CodebookFrame::filled(4, 0));

  for (std::size_t v = 1; v < 16; ++v) {
    const auto row = m.codebooks[0].data().subspan(v * 6, 6);
    const std::vector<FeatureFrame> exact{FeatureFrame(row.begin(), row.end())};
    const CodebookFrame codes = rvq_encode(m, exact).front();
    CHECK(codes.tokens[0] == v);
    CHECK(std::all_of(codes.tokens.begin() + 1, codes.tokens.end(), [](TokenId t) { return t == 0; }));
    CHECK(rvq_residual_norms(m, exact.front()).back() == 0.0);
  }
  const std::vector<FeatureFrame> narrow{FeatureFrame(5, 0.0)};
  try {
    rvq_encode(m, narrow);
    FAIL("expected feature error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFeature);
  }
}

TEST_CASE("encoding matches the exhaustive greedy reference") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const CodecModel m = CodecModel::random(3, 8, 4, 0.8, rng);
    const auto frames = random_frames(200, 4, rng);
    const auto codes = rvq_encode(m, frames);
    for (std::size_t i = 0; i < frames.size(); ++i) CHECK(codes[i] == reference_encode(m, frames[i]));
  }
}

TEST_CASE("decoding") {
  Rng rng(3);
  const CodecModel m = CodecModel::random(3, 8, 4, 1.0, rng);
  const std::vector<CodebookFrame> zero{CodebookFrame::filled(3, 0)};
  const FeatureFrame silent = rvq_decode(m, zero).front();
  for (double v : silent) CHECK(v == 0.0);

  const auto codes = single({3, 5, 7});
  const FeatureFrame f = rvq_decode(m, codes).front();
  for (std::size_t i = 0; i < 4; ++i) {
    const double sum = m.codebooks[2].at(7, i) + m.codebooks[0].at(3, i) + m.codebooks[1].at(5, i);
    CHECK(f[i] == doctest::Approx(sum).epsilon(1e-15));
  }
  const auto bad = single({3, 8, 0});
  try {
    rvq_decode(m, bad);
    FAIL("expected vocabulary error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kVocabulary);
  }
  const auto short_frame = single({3, 1});
  CHECK_THROWS_AS(rvq_decode(m, short_frame), Error);

  const auto frames = random_frames(300, 4, rng);
  const auto back = rvq_decode(m, rvq_encode(m, frames));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    FeatureFrame r(4);
    for (std::size_t k = 0; k < 4; ++k) r[k] = frames[i][k] - back[i][k];
    CHECK(norm(r) <= norm(frames[i]));
  }
}

TEST_CASE("token offsets") {
  const auto codes = single({0, 5, 1021});
  const auto tokens = codes_to_tokens(codes);
  CHECK(tokens.front().tokens == std::vector<TokenId>{2, 7, 1023});
  CHECK(tokens_to_codes(tokens) == codes);
  const auto reserved = single({kBos, kEos, 4});
  CHECK(tokens_to_codes(reserved).front().tokens == std::vector<TokenId>{0, 0, 2});
}

TEST_CASE("training on exactly clusterable data") {
  Rng rng(4);
  const auto distinct = random_frames(7, 5, rng, 3.0);
  std::vector<FeatureFrame> data;
  for (int copy = 0; copy < 12; ++copy) data.insert(data.end(), distinct.begin(), distinct.end());
  CodecTrainLog log;
  const CodecModel m = train_codebooks(data, {.codebooks = 2, .entries = 8, .iterations = 10, .seed = 1}, &log);
  CHECK(log.objective[0].back() == 0.0);
  const auto back = rvq_decode(m, rvq_encode(m, data));
  CHECK(mean_squared_error(back, data) < 1e-24);
}

TEST_CASE("training objective, pinned entries and reproducibility") {
  Rng rng(5);
  const auto train = random_frames(600, 8, rng);
  const auto held_out = random_frames(300, 8, rng);
  const CodecTrainOptions opts{.codebooks = 4, .entries = 32, .iterations = 12, .seed = 9};
  CodecTrainLog log;
  const CodecModel m = train_codebooks(train, opts, &log);
  REQUIRE(log.objective.size() == 4);
  for (const auto& stage : log.objective) {
    for (std::size_t it = 1; it < stage.size(); ++it) CHECK(stage[it] <= stage[it - 1]);
  }
  for (const auto& book : m.codebooks) {
    for (std::size_t i = 0; i < 8; ++i) CHECK(book.at(0, i) == 0.0);
  }
  const CodecModel again = train_codebooks(train, opts);
  for (std::size_t j = 0; j < 4; ++j) CHECK(testing::bit_equal(m.codebooks[j].data(), again.codebooks[j].data()));

  Rng base_rng(6);
  const CodecModel baseline = CodecModel::random(4, 32, 8, 1.0, base_rng);
  const double trained = mean_squared_error(rvq_decode(m, rvq_encode(m, held_out)), held_out);
  const double untrained = mean_squared_error(rvq_decode(baseline, rvq_encode(baseline, held_out)), held_out);
  CHECK(trained <= untrained);

  // Prefix decode sweep: using more codebooks never hurts.
  const auto codes = rvq_encode(m, held_out);
  double previous = INFINITY;
  for (std::size_t k = 1; k <= 4; ++k) {
    const double mse = mean_squared_error(rvq_decode(m, codes, k), held_out);
    CHECK(mse <= previous);
    previous = mse;
  }
  CHECK(mean_squared_error(rvq_decode(m, codes, 4), held_out) < mean_squared_error(rvq_decode(m, codes, 1), held_out));

  try {
    train_codebooks(std::span(train).first(20), opts);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
}

TEST_CASE("residual norms never increase") {
  Rng rng(7);
  const CodecModel m = train_codebooks(random_frames(400, 6, rng), {.codebooks = 8, .entries = 16, .iterations = 5});
  for (const auto& f : random_frames(1000, 6, rng, 2.0)) {
    const auto norms = rvq_residual_norms(m, f);
    REQUIRE(norms.size() == 9);
    for (std::size_t j = 1; j < norms.size(); ++j) CHECK(norms[j] <= norms[j - 1]);
  }
}

TEST_CASE("codec checkpoint round trip") {
  Rng rng(8);
  CodecModel m = CodecModel::random(2, 5, 3, 1.0, rng);
  m.frame_rate = 25.0;
  const CodecModel back = CodecModel::from_named(decode_checkpoint(encode_checkpoint(m.named())));
  CHECK(back.frame_rate == 25.0);
  REQUIRE(back.num_codebooks() == 2);
  CHECK(testing::bit_equal(back.codebooks[1].data(), m.codebooks[1].data()));
}

TEST_CASE("synthesis sizes, silence and linearity") {
  Rng rng(9);
  const auto a = random_frames(10, 16, rng);
  const auto b = random_frames(10, 16, rng);
  CHECK(synth_waveform(a, 12.5, 16000).size() == 12800);
  const std::vector<FeatureFrame> zero(3, FeatureFrame(16, 0.0));
  for (double s : synth_waveform(zero, 12.5)) CHECK(s == 0.0);

  std::vector<FeatureFrame> ab = a;
  for (std::size_t m = 0; m < ab.size(); ++m)
    for (std::size_t i = 0; i < 16; ++i) ab[m][i] += b[m][i];
  const auto sa = synth_waveform(a, 12.5), sb = synth_waveform(b, 12.5), sab = synth_waveform(ab, 12.5);
  double worst = 0;
  for (std::size_t n = 0; n < sab.size(); ++n) worst = std::max(worst, std::abs(sab[n] - sa[n] - sb[n]));
  CHECK(worst < 1e-9);
  CHECK_THROWS_AS(synth_waveform(a, 0.0), Error);
}

TEST_CASE("matched filter inverts synthesis") {
  Rng rng(10);
  for (double rate : {12.5, 25.0, 50.0}) {
    const auto f = random_frames(7, 16, rng);
    const SynthesisLayout layout = synthesis_layout(16, rate);
    const auto samples = synth_waveform(f, rate);
    const auto back = feature_extract(samples, 16, rate);
    REQUIRE(back.size() == 7);
    double worst = 0;
    for (std::size_t m = 0; m < 7; ++m)
      for (std::size_t i = 0; i < 16; ++i) {
        const double expect = f[m][i] * layout.matched_filter_scale();
        worst = std::max(worst, std::abs(back[m][i] - expect) / std::abs(expect));
      }
    CHECK(worst < 1e-6);
  }
  const std::vector<double> silence(3000, 0.0);
  const auto quiet = feature_extract(silence, 16, 12.5);
  CHECK(quiet.size() == 2);  // floor(3000 / 1280)
  for (const auto& q : quiet)
    for (double v : q) CHECK(v == 0.0);
  CHECK(feature_extract(std::vector<double>(1279, 0.0), 16, 12.5).empty());
}

TEST_CASE("wav encoding") {
  const std::vector<double> samples{0.0, 0.5, -0.5, 1.0, -1.0, 2.0};
  const std::string bytes = encode_wav(samples, 16000);
  CHECK(bytes.size() == 44 + 2 * samples.size());
  CHECK(bytes.substr(0, 4) == "RIFF");
  CHECK(bytes.substr(36, 4) == "data");
  const WavAudio back = decode_wav(bytes);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == samples.size());
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(back.samples[i] - samples[i]) <= 0.5 / 32767.0);
  CHECK(back.samples[5] == 1.0);  // clipped
  CHECK(encode_wav(samples, 16000) == bytes);
  CHECK_THROWS_AS(decode_wav("RIFFxxxxWAVX"), Error);
}
