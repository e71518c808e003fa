// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "tforge/checkpoint.hpp"
#include "tforge/error.hpp"
#include "tforge/ops.hpp"
#include "tforge/rng.hpp"
#include "tforge/tensor.hpp"

using namespace tforge;
using tforge::testing::weighted_sum;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected tforge::Error");
  return ErrorKind::kContract;
}

}  // namespace

TEST_CASE("matmul small cases") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  CHECK(testing::bit_equal(matmul(eye, b).data(), b.data()));

  const Tensor r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
    const std::string what = e.what();
    CHECK(what.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients agree with central differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({4, 5}, rng);
  Tensor b = Tensor::randn({5, 3}, rng);
  // Every entry of d(sum w*AB)/dA is a dense random combination; tolerance 1e-6.
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(matmul(x, b)); }, a) < 1e-6);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(matmul(a, x)); }, b) < 1e-6);
}

TEST_CASE("softmax") {
  const Tensor u = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor big = softmax(Tensor::from({2}, {1000, 0}));
  CHECK(std::isfinite(big.at(0)));
  CHECK(big.at(0) == doctest::Approx(1.0));
  CHECK(big.at(1) < 1e-300);

  Rng rng(3);
  const Tensor r = softmax(Tensor::randn({7}, rng, 3.0));
  double total = 0.0;
  for (double v : r.data()) {
    CHECK(v >= 0.0);
    total += v;
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);

  const Tensor nan = Tensor::from({2}, {NAN, 0.0});
  CHECK(kind_of([&] { softmax(nan); }) == ErrorKind::kNaN);
}

TEST_CASE("softmax along a middle axis sums to one along that axis") {
  Rng rng(4);
  const Tensor x = Tensor::randn({2, 3, 4}, rng);
  const Tensor y = softmax(x, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t in = 0; in < 4; ++in) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += y.at(o * 12 + i * 4 + in);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  CHECK(grad_check([](const Tensor& t) { return weighted_sum(softmax(t, 1)); }, x) < 1e-4);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 4, -1}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from({4}, {1.5, -2, 0.25, 3}, true);
  backward(scale(sum(mul(y, y)), 0.5));
  CHECK(testing::bit_equal(y.grad(), y.data()));

  CHECK(kind_of([&] { backward(add(x, x)); }) == ErrorKind::kContract);
}

TEST_CASE("repeated backward accumulates into leaves") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  const Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[2] == 12.0);
}

TEST_CASE("disconnected tensors receive no gradient") {
  Tensor used = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {3, 4}, true);
  backward(sum(used));
  CHECK(!unused.has_grad());
}

TEST_CASE("tape is topologically ordered and visits each op once") {
  Rng rng(5);
  Tensor w = Tensor::randn({3, 3}, rng, 1.0, true);
  Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
  const Tensor h = tanh(matmul(x, w));
  const Tensor loss = sum(add(h, matmul(h, w)));
  const Tape tape = record_tape(loss);
  std::vector<const detail::Node*> seen;
  for (auto* node : tape.ops) {
    CHECK(std::find(seen.begin(), seen.end(), node) == seen.end());
    for (const auto& parent : node->parents) {
      if (!parent->requires_grad) continue;
      CHECK(std::find(seen.begin(), seen.end(), parent.get()) != seen.end());
    }
    seen.push_back(node);
  }
  CHECK(tape.ops.back() == loss.node().get());
}

TEST_CASE("grad_check") {
  Rng rng(6);
  const Tensor x = Tensor::randn({3, 4}, rng);
  CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) < 1e-9);

  // Cross-entropy of a one-layer network.
  const Tensor w = Tensor::randn({4, 5}, rng);
  const std::vector<TokenId> targets{0, 3, 4};
  CHECK(grad_check([&](const Tensor& in) { return cross_entropy(tanh(matmul(in, w)), targets, kNoIgnore); }, x, 1e-5) <
        1e-4);

  // A primitive whose backward rule is deliberately wrong (d/dx x^2 taken as x).
  auto bad_square = [](const Tensor& t) {
    Tensor out = Tensor::from(t.shape(), std::vector<double>(t.numel()));
    for (std::size_t i = 0; i < t.numel(); ++i) out.mutable_data()[i] = t.at(i) * t.at(i);
    auto src = t.node();
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = "bad_square";
    node.parents.push_back(src);
    node.backward = [src](detail::Node& self) {
      auto& g = src->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * src->data[i];
    };
    return sum(out);
  };
  CHECK(grad_check(bad_square, x) > 1e-2);

  int calls = 0;
  auto flaky = [&](const Tensor& t) { return scale(sum(t), 1.0 + 1e-3 * ++calls); };
  CHECK(kind_of([&] { grad_check(flaky, x); }) == ErrorKind::kDeterminism);
  CHECK(kind_of([&] { grad_check([](const Tensor& t) { return sum(t); }, x, 0.1); }) == ErrorKind::kContract);
}

TEST_CASE("every primitive passes grad_check at eps 1e-5") {
  Rng rng(7);
  const Tensor a = Tensor::randn({3, 4}, rng);
  const Tensor b = Tensor::randn({3, 4}, rng);
  const Tensor bias = Tensor::randn({4}, rng);
  const Tensor gain = Tensor::randn({4}, rng);
  const double eps = 1e-5, tol = 1e-4;
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(transpose(x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(add(x, b)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(sub(b, x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(mul(x, b)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(scale(x, -2.5)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(add_bias(a, x)); }, bias, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return mean(mul(x, x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(softmax(x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(gelu(x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(tanh(x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(relu(x)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(concat_cols(x, b)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(concat_rows({b, x})); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(slice_rows(x, 1, 3)); }, a, eps) < tol);
  const std::vector<TokenId> ids{2, 0, 2};
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(embedding_lookup(x, ids)); }, a, eps) < tol);
  const std::vector<std::size_t> rows{1, kZeroRow, 1, 2};
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(select_rows(x, rows, 4)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(layer_norm(x, gain, bias)); }, a, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(layer_norm(a, x, bias)); }, gain, eps) < tol);
  const std::vector<TokenId> targets{1, 1, 3};
  CHECK(grad_check([&](const Tensor& x) { return nll_sum(x, targets, 3); }, a, eps) < tol);

  const Tensor q = Tensor::randn({2, 4}, rng);
  const Tensor k = Tensor::randn({3, 4}, rng);
  const Tensor v = Tensor::randn({3, 4}, rng);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(causal_attention(x, k, v, 2)); }, q, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(causal_attention(q, x, v, 2)); }, k, eps) < tol);
  CHECK(grad_check([&](const Tensor& x) { return weighted_sum(causal_attention(q, k, x, 2)); }, v, eps) < tol);
}

TEST_CASE("matmul is associative and distributes over add on small integers") {
  Rng rng(8);
  auto small_int = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& e : v) e = static_cast<double>(static_cast<int>(rng.below(7)) - 3);
    return Tensor::from(s, v);
  };
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = small_int({3, 4}), b = small_int({4, 2}), c = small_int({2, 5}), d = small_int({4, 2});
    CHECK(testing::bit_equal(matmul(matmul(a, b), c).data(), matmul(a, matmul(b, c)).data()));
    CHECK(testing::bit_equal(matmul(a, add(b, d)).data(), add(matmul(a, b), matmul(a, d)).data()));
  }
}

TEST_CASE("cross entropy") {
  const Tensor uniform = Tensor::zeros({3, 16});
  const std::vector<TokenId> t{1, 5, 15};
  CHECK(cross_entropy(uniform, t, kNoIgnore).item() == doctest::Approx(std::log(16.0)).epsilon(1e-14));

  Tensor peaked = Tensor::zeros({2, 4});
  peaked.mutable_data()[0 * 4 + 2] = 1000.0;
  peaked.mutable_data()[1 * 4 + 0] = 1000.0;
  const std::vector<TokenId> pt{2, 0};
  CHECK(cross_entropy(peaked, pt, kNoIgnore).item() < 1e-12);

  // Direct -log softmax[target] average.
  Rng rng(9);
  const Tensor logits = Tensor::randn({6, 9}, rng, 2.0);
  const std::vector<TokenId> rt{0, 8, 3, 3, 99, 4};
  const Tensor p = softmax(logits);
  double direct = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    if (rt[i] == 99) continue;
    direct -= std::log(p.at(i, rt[i]));
    ++n;
  }
  direct /= n;
  CHECK(std::abs(cross_entropy(logits, rt, 99).item() - direct) < 1e-10);

  const std::vector<TokenId> all_ignored{99, 99, 99, 99, 99, 99};
  CHECK(kind_of([&] { cross_entropy(logits, all_ignored, 99); }) == ErrorKind::kDegenerateBatch);
  const std::vector<TokenId> oob{0, 0, 0, 0, 0, 9};
  CHECK(kind_of([&] { cross_entropy(logits, oob, 99); }) == ErrorKind::kVocabulary);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(10);
  NamedTensors tensors;
  tensors.emplace_back("scalar", Tensor::scalar(-0.0));
  tensors.emplace_back("mat", Tensor::randn({3, 7}, rng, 1e300));
  tensors.emplace_back("vec.\xc3\xa9", Tensor::from({4}, {INFINITY, -INFINITY, 5e-324, 1.0 / 3.0}));
  tensors.emplace_back("cube", Tensor::randn({2, 2, 3}, rng));
  const std::string bytes = encode_checkpoint(tensors);
  CHECK(bytes.substr(0, 7) == "TFORGE1");
  const NamedTensors back = decode_checkpoint(bytes);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape() == tensors[i].second.shape());
    CHECK(std::memcmp(back[i].second.data().data(), tensors[i].second.data().data(),
                      8 * tensors[i].second.numel()) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(kind_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }) == ErrorKind::kCheckpoint);
  CHECK(kind_of([&] { decode_checkpoint("TFORGE2\x01\x00\x00\x00"); }) == ErrorKind::kCheckpoint);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    CHECK(!sum(x).requires_grad());
  }
  CHECK(sum(x).requires_grad());
}
