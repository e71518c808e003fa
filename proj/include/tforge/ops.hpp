// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tforge/tensor.hpp"

namespace tforge {

using TokenId = std::size_t;

// Differentiable primitives. Every function records itself on the graph when
// grad recording is enabled and any input requires a gradient.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x[..., n] + bias[n], broadcast over the leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x);  // last axis

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

// Rank-2 layout helpers.
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

inline constexpr std::size_t kZeroRow = static_cast<std::size_t>(-1);

// out[i] = src[index[i]], or a zero row where index[i] == kZeroRow. src may be
// undefined when every index is kZeroRow.
Tensor select_rows(const Tensor& src, std::span<const std::size_t> index, std::size_t width);

// Row gather from table[V x d]; backward scatters into used rows only.
Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids);

// Normalizes each row of x[..., n] to zero mean and unit variance, then
// applies gain[n] and bias[n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Multi-head scaled dot-product attention with a causal mask. q holds the
// newest t positions; k and v hold all T >= t positions, so query row i sits
// at absolute position T - t + i and sees keys 0..T - t + i.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Sum over rows of -log softmax(logits)[target]; rows whose target equals
// ignore_id are skipped. counted (optional) receives the number of rows used.
Tensor nll_sum(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id,
               std::size_t* counted = nullptr);
// Mean of nll_sum over non-ignored rows.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id);

inline constexpr TokenId kNoIgnore = static_cast<TokenId>(-1);

}  // namespace tforge
