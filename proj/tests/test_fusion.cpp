// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "tforge/error.hpp"
#include "tforge/fusion.hpp"
#include "tforge/rng.hpp"

using namespace tforge;
using tforge::testing::bit_equal;
using tforge::testing::max_abs_diff;
using tforge::testing::weighted_sum;

namespace {

FusedSteps numbered(std::size_t n, std::size_t width) {
  if (n == 0) return {Tensor(), width};
  std::vector<double> v(n * width);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < width; ++c) v[i * width + c] = static_cast<double>(i + 1) + 0.01 * c;
  return {Tensor::from({n, width}, v), width};
}

// Builds the whole interleaved sequence [h1, 0.., h2, 0.., ...] first and
// then cuts or pads it to length t.
std::vector<std::vector<double>> brute_force(const FusedSteps& f, std::size_t t, std::size_t lambda) {
  std::vector<std::vector<double>> full;
  for (std::size_t i = 0; i < f.size(); ++i) {
    full.emplace_back(f.vectors.data().begin() + i * f.width, f.vectors.data().begin() + (i + 1) * f.width);
    for (std::size_t z = 1; z < lambda; ++z) full.emplace_back(f.width, 0.0);
  }
  full.resize(t, std::vector<double>(f.width, 0.0));
  return full;
}

std::vector<std::vector<double>> rows_of(const UpsampledContext& c, std::size_t width) {
  std::vector<std::vector<double>> out;
  for (std::size_t p = 0; p < c.size(); ++p)
    out.emplace_back(c.vectors.data().begin() + p * width, c.vectors.data().begin() + (p + 1) * width);
  return out;
}

}  // namespace

TEST_CASE("upsample examples") {
  const FusedSteps f = numbered(2, 3);
  const UpsampledContext five = upsample_schedule(f, 5, 3);
  CHECK(five.slots == std::vector<std::size_t>{0, kZeroRow, kZeroRow, 1, kZeroRow});
  CHECK(rows_of(five, 3) == brute_force(f, 5, 3));
  CHECK(five.vectors.at(3, 0) == 2.0);

  const UpsampledContext eight = upsample_schedule(f, 8, 3);
  CHECK(eight.slots ==
        std::vector<std::size_t>{0, kZeroRow, kZeroRow, 1, kZeroRow, kZeroRow, kZeroRow, kZeroRow});
  CHECK(upsample_schedule(f, 0, 3).size() == 0);
}

TEST_CASE("upsample equals the brute-force constructor") {
  for (std::size_t n = 0; n <= 6; ++n) {
    const FusedSteps f = numbered(n, 2);
    for (std::size_t lambda = 1; lambda <= 4; ++lambda) {
      for (std::size_t t = 0; t <= 25; ++t) {
        const UpsampledContext c = upsample_schedule(f, t, lambda);
        REQUIRE(c.size() == t);
        CHECK(rows_of(c, 2) == brute_force(f, t, lambda));
        std::size_t filled = 0;
        for (auto s : c.slots) filled += s != kZeroRow;
        CHECK(filled == std::min(n, (t + lambda - 1) / lambda));
      }
    }
  }
}

TEST_CASE("upsample prefix stability and ranges") {
  const FusedSteps f = numbered(4, 3);
  for (std::size_t t = 0; t <= 15; ++t) {
    const UpsampledContext a = upsample_schedule(f, t);
    for (std::size_t k = 0; k <= 5; ++k) {
      const UpsampledContext b = upsample_schedule(f, t + k);
      CHECK(std::equal(a.slots.begin(), a.slots.end(), b.slots.begin()));
      if (t > 0) CHECK(bit_equal(a.vectors.data(), b.vectors.data().subspan(0, t * 3)));
    }
  }
  const UpsampledContext whole = upsample_schedule(f, 14);
  const UpsampledContext mid = upsample_range(f, 5, 11);
  CHECK(bit_equal(mid.vectors.data(), whole.vectors.data().subspan(15, 18)));
  CHECK(text_needed_for(10, 3) == 4);
  CHECK(text_needed_for(0, 3) == 0);
  CHECK(text_needed_for(9, 3) == 3);
}

TEST_CASE("schedule grows consistently with streaming text") {
  // Slots filled from a shorter text never change once more text arrives.
  for (std::size_t n = 0; n < 5; ++n) {
    for (std::size_t t = 0; t <= 3 * n; ++t) {
      CHECK(schedule_slots(n, 0, t, 3) == schedule_slots(n + 1, 0, t, 3));
    }
  }
}

TEST_CASE("fuse with zero weights is zero") {
  FusionConfig cfg{.text_vocab = 10, .embed_width = 4, .thinker_width = 6, .hidden_width = 5, .output_width = 7};
  const FusionParams p = FusionParams::zeros(cfg);
  Rng rng(1);
  std::vector<TokenId> ids{1, 2, 3};
  const FusedSteps f = fuse(p, ids, Tensor::randn({3, 6}, rng));
  CHECK(f.vectors.shape() == Shape{3, 7});
  for (double v : f.vectors.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(fuse(p, ids, Tensor::randn({2, 6}, rng)), Error);
  try {
    fuse(p, ids, Tensor::randn({2, 6}, rng));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kAlignment);
  }
}

TEST_CASE("fuse N=1 against hand arithmetic") {
  // Embedding width 1, hidden width 1: concatenated input is 2-wide.
  FusionConfig cfg{.text_vocab = 3, .embed_width = 1, .thinker_width = 1, .hidden_width = 2, .output_width = 2,
                   .activation = Activation::kRelu};
  FusionParams p = FusionParams::zeros(cfg);
  auto e = p.text_embedding.table.mutable_data();
  e[2] = 0.5;
  auto w1 = p.in_proj.weight.mutable_data();  // [2 x 2]
  w1[0] = 1, w1[1] = -2, w1[2] = 3, w1[3] = 4;
  auto b1 = p.in_proj.bias.mutable_data();
  b1[0] = 0.25, b1[1] = -10;
  auto w2 = p.out_proj.weight.mutable_data();
  w2[0] = 2, w2[1] = 1, w2[2] = -1, w2[3] = 0.5;
  auto b2 = p.out_proj.bias.mutable_data();
  b2[0] = 0.1, b2[1] = 0.2;
  std::vector<TokenId> ids{2};
  const FusedSteps f = fuse(p, ids, Tensor::from({1, 1}, {2.0}));
  // z = [0.5, 2] W1 + b1 = [0.5 + 6 + 0.25, -1 + 8 - 10] = [6.75, -3]; relu -> [6.75, 0]
  // out = [6.75*2 + 0.1, 6.75*1 + 0.2]
  CHECK(f.vectors.at(0) == doctest::Approx(13.6).epsilon(1e-15));
  CHECK(f.vectors.at(1) == doctest::Approx(6.95).epsilon(1e-15));
}

TEST_CASE("fuse gradients") {
  Rng rng(2);
  FusionConfig cfg{.text_vocab = 7, .embed_width = 3, .thinker_width = 4, .hidden_width = 5, .output_width = 3};
  const FusionParams p = FusionParams::init(cfg, rng);
  std::vector<TokenId> ids{1, 4, 6};
  const Tensor h = Tensor::randn({3, 4}, rng);
  CHECK(grad_check([&](const Tensor& in) { return weighted_sum(fuse(p, ids, in).vectors); }, h) < 1e-4);
  NamedTensors named;
  p.collect("f", named);
  CHECK(grad_check_leaves([&] { return weighted_sum(fuse(p, ids, h).vectors); }, parameter_tensors(named)) < 1e-4);
}

TEST_CASE("fuse is position-wise") {
  Rng rng(3);
  FusionConfig cfg{.text_vocab = 9, .embed_width = 3, .thinker_width = 4, .hidden_width = 6, .output_width = 5};
  const FusionParams p = FusionParams::init(cfg, rng);
  std::vector<TokenId> ids{1, 4, 6, 8};
  const Tensor h = Tensor::randn({4, 4}, rng);
  const FusedSteps base = fuse(p, ids, h);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<TokenId> pids;
  for (auto i : perm) pids.push_back(ids[i]);
  const Tensor ph = select_rows(h, perm, 4);
  const FusedSteps shuffled = fuse(p, pids, ph);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(bit_equal(shuffled.vectors.data().subspan(i * 5, 5), base.vectors.data().subspan(perm[i] * 5, 5)));
  }
  // Streaming append gives the same rows as one call.
  std::vector<TokenId> head{1, 4}, tail{6, 8};
  const FusedSteps joined =
      append_fused(fuse(p, head, slice_rows(h, 0, 2)), fuse(p, tail, slice_rows(h, 2, 4)));
  CHECK(bit_equal(joined.vectors.data(), base.vectors.data()));
}

TEST_CASE("underrun names") {
  CHECK(parse_underrun("stall") == Underrun::kStall);
  CHECK(parse_underrun(to_string(Underrun::kPadZeros)) == Underrun::kPadZeros);
  CHECK_THROWS_AS(parse_underrun("wait"), Error);
}
