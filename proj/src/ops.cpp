// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "tforge/error.hpp"

namespace tforge {
namespace {

using detail::Node;

std::shared_ptr<Node> node_of(const Tensor& t) {
  if (!t.defined()) throw Error(ErrorKind::kContract, "use of undefined tensor");
  return t.node();
}

// Builds the output tensor and attaches the backward closure when recording.
template <typename Backward>
Tensor make_result(Shape shape, std::vector<double> values, const char* op, std::vector<Tensor> inputs,
                   Backward&& backward_fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  bool record = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) record = record || in.requires_grad();
  }
  if (record) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward = std::forward<Backward>(backward_fn);
  }
  return out;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw Error(ErrorKind::kDimension, std::string(what) + " expects a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kDimension,
                std::string(what) + ": shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (std::isnan(v)) throw Error(ErrorKind::kNaN, std::string(what) + " received NaN input");
  }
}

// C[m x n] = A[m x k] * B[k x n]. Each output row is computed with the same
// instruction sequence regardless of m, so a row's value never depends on
// which other rows share the call.
void gemm_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kBlock = 4;
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    const std::size_t i1 = std::min(m, i0 + kBlock);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      for (std::size_t i = i0; i < i1; ++i) {
        const double s = a[i * k + p];
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
      }
    }
  }
}

// Shape of a tensor viewed as (outer, n, inner) around an axis.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView view_around(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < axis) v.outer *= shape[i];
    else if (i == axis) v.n = shape[i];
    else v.inner *= shape[i];
  }
  return v;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  auto xs = node_of(x);
  std::vector<double> out(xs->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs->data[i]);
  return make_result(xs->shape, std::move(out), op, {x}, [xs, deriv](Node& self) {
    if (!xs->requires_grad) return;
    auto& gx = xs->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xs->data[i], self.data[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw Error(ErrorKind::kDimension,
                "matmul inner extents disagree: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  auto an = node_of(a), bn = node_of(b);
  std::vector<double> out(m * n);
  gemm_rows(an->data.data(), bn->data.data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [an, bn, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      const double* bd = bn->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bd + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      const double* ad = an->data.data();
      for (std::size_t p = 0; p < k; ++p) {
        double* gbrow = gb.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const double s = ad[i * k + p];
          if (s == 0.0) continue;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  auto an = node_of(a);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = an->data[i * n + j];
  return make_result({n, m}, std::move(out), "transpose", {a}, [an, m, n](Node& self) {
    if (!an->requires_grad) return;
    auto& ga = an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = node_of(a), bn = node_of(b);
  std::vector<double> out(an->data);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bn->data[i];
  return make_result(an->shape, std::move(out), "add", {a, b}, [an, bn](Node& self) {
    for (auto* in : {an.get(), bn.get()}) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = node_of(a), bn = node_of(b);
  std::vector<double> out(an->data);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bn->data[i];
  return make_result(an->shape, std::move(out), "sub", {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = node_of(a), bn = node_of(b);
  std::vector<double> out(an->data);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bn->data[i];
  return make_result(an->shape, std::move(out), "mul", {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto an = node_of(a);
  std::vector<double> out(an->data);
  for (auto& v : out) v *= factor;
  return make_result(an->shape, std::move(out), "scale", {a}, [an, factor](Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw Error(ErrorKind::kDimension,
                "add_bias: " + shape_to_string(x.shape()) + " + " + shape_to_string(bias.shape()));
  }
  auto xn = node_of(x), bn = node_of(bias);
  const std::size_t n = bn->data.size();
  std::vector<double> out(xn->data);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bn->data[i % n];
  return make_result(xn->shape, std::move(out), "add_bias", {x, bias}, [xn, bn, n](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  auto an = node_of(a);
  double total = 0.0;
  for (double v : an->data) total += v;
  return make_result({}, {total}, "sum", {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw Error(ErrorKind::kDimension, "softmax axis out of range for " + shape_to_string(x.shape()));
  auto xn = node_of(x);
  require_finite(xn->data, "softmax");
  const AxisView v = view_around(xn->shape, axis);
  std::vector<double> out(xn->data.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.n * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, xn->data[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) {
        const double e = std::exp(xn->data[base + i * v.inner] - mx);
        out[base + i * v.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < v.n; ++i) out[base + i * v.inner] /= z;
    }
  }
  return make_result(xn->shape, std::move(out), "softmax", {x}, [xn, v](Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.n * v.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t idx = base + i * v.inner;
          dot += self.data[idx] * self.grad[idx];
        }
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t idx = base + i * v.inner;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw Error(ErrorKind::kDimension, "softmax of a scalar");
  return softmax(x, x.rank() - 1);
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Tensor gelu(const Tensor& x) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double u = kC * (v + kA * v * v * v);
        const double th = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::kDimension,
                "concat_cols row counts differ: " + shape_to_string(a.shape()) + ", " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  auto an = node_of(a), bn = node_of(b);
  std::vector<double> out(m * (na + nb));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(an->data.data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(bn->data.data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  return make_result({m, na + nb}, std::move(out), "concat_cols", {a, b}, [an, bn, m, na, nb](Node& self) {
    const std::size_t w = na + nb;
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * w + j];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * w + na + j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kContract, "concat_rows of nothing");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) throw Error(ErrorKind::kDimension, "concat_rows widths differ");
    m += p.rows();
    nodes.push_back(node_of(p));
  }
  if (parts.size() == 1) return parts.front();
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& nd : nodes) out.insert(out.end(), nd->data.begin(), nd->data.end());
  return make_result({m, n}, std::move(out), "concat_rows", parts, [nodes](Node& self) {
    std::size_t offset = 0;
    for (const auto& nd : nodes) {
      if (nd->requires_grad) {
        auto& g = nd->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += nd->data.size();
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin >= end || end > a.rows()) {
    throw Error(ErrorKind::kDimension, "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                                           ") of " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.cols();
  auto an = node_of(a);
  std::vector<double> out(an->data.begin() + begin * n, an->data.begin() + end * n);
  return make_result({end - begin, n}, std::move(out), "slice_rows", {a}, [an, begin, n](Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  require_rank2(table, "embedding_lookup");
  if (ids.empty()) throw Error(ErrorKind::kContract, "embedding_lookup with no ids");
  const std::size_t vocab = table.rows(), d = table.cols();
  auto tn = node_of(table);
  std::vector<TokenId> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab) {
      throw Error(ErrorKind::kVocabulary, "token id " + std::to_string(idx[r]) + " at index " + std::to_string(r) +
                                              " exceeds vocabulary size " + std::to_string(vocab));
    }
    std::copy_n(tn->data.data() + idx[r] * d, d, out.data() + r * d);
  }
  const std::size_t count = idx.size();
  return make_result({count, d}, std::move(out), "embedding", {table}, [tn, idx = std::move(idx), d](Node& self) {
    if (!tn->requires_grad) return;
    auto& g = tn->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
  });
}

Tensor select_rows(const Tensor& src, std::span<const std::size_t> index, std::size_t width) {
  if (index.empty()) throw Error(ErrorKind::kContract, "select_rows with no rows");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * width, 0.0);
  std::shared_ptr<Node> sn;
  std::vector<Tensor> inputs;
  if (src.defined()) {
    require_rank2(src, "select_rows");
    if (src.cols() != width) throw Error(ErrorKind::kDimension, "select_rows width mismatch");
    sn = src.node();
    inputs.push_back(src);
  }
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] == kZeroRow) continue;
    if (!sn || idx[r] >= src.rows()) {
      throw Error(ErrorKind::kDimension, "select_rows index " + std::to_string(idx[r]) + " out of range");
    }
    std::copy_n(sn->data.data() + idx[r] * width, width, out.data() + r * width);
  }
  const std::size_t count = idx.size();
  return make_result({count, width}, std::move(out), "select_rows", std::move(inputs),
                     [sn, idx = std::move(idx), width](Node& self) {
                       if (!sn || !sn->requires_grad) return;
                       auto& g = sn->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         if (idx[r] == kZeroRow) continue;
                         for (std::size_t j = 0; j < width; ++j) g[idx[r] * width + j] += self.grad[r * width + j];
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back()) {
    throw Error(ErrorKind::kDimension, "layer_norm: input " + shape_to_string(x.shape()) + ", gain " +
                                           shape_to_string(gain.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  auto xn = node_of(x), gn = node_of(gain), bn = node_of(bias);
  const std::size_t n = gain.dim(0);
  const std::size_t rows = xn->data.size() / n;
  std::vector<double> xhat(xn->data.size()), rstd(rows), out(xn->data.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xn->data.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mu) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gn->data[j] + bn->data[j];
    }
  }
  return make_result(xn->shape, std::move(out), "layer_norm", {x, gain, bias},
                     [xn, gn, bn, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       const double* g = self.grad.data();
                       if (gn->requires_grad) {
                         auto& gg = gn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                       }
                       if (!xn->requires_grad) return;
                       auto& gx = xn->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dxhat = g[r * n + j] * gn->data[j];
                           m1 += dxhat;
                           m2 += dxhat * xhat[r * n + j];
                         }
                         m1 /= static_cast<double>(n);
                         m2 /= static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dxhat = g[r * n + j] * gn->data[j];
                           gx[r * n + j] += rstd[r] * (dxhat - m1 - xhat[r * n + j] * m2);
                         }
                       }
                     });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank2(q, "causal_attention");
  require_rank2(k, "causal_attention");
  require_rank2(v, "causal_attention");
  const std::size_t t = q.rows(), total = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != total) {
    throw Error(ErrorKind::kCache, "attention widths disagree: q " + shape_to_string(q.shape()) + ", k " +
                                       shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (total < t) throw Error(ErrorKind::kCache, "fewer keys than queries");
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::kDimension, "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads, offset = total - t;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto qn = node_of(q), kn = node_of(k), vn = node_of(v);
  const double* qd = qn->data.data();
  const double* kd = kn->data.data();
  const double* vd = vn->data.data();
  // probs[h][i][j] for j <= offset + i.
  std::vector<double> probs(heads * t * total, 0.0);
  std::vector<double> out(t * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t visible = offset + i + 1;
      double* p = probs.data() + (h * t + i) * total;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qd[i * d + c0 + c] * kd[j * d + c0 + c];
        p[j] = s * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      double* orow = out.data() + i * d + c0;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) orow[c] += p[j] * vd[j * d + c0 + c];
      }
    }
  }
  return make_result(
      {t, d}, std::move(out), "causal_attention", {q, k, v},
      [qn, kn, vn, probs = std::move(probs), heads, t, total, d, dh, offset, sc](Node& self) {
        const double* g = self.grad.data();
        const double* qd = qn->data.data();
        const double* kd = kn->data.data();
        const double* vd = vn->data.data();
        double* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
        double* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
        double* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
        std::vector<double> dp(total);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < t; ++i) {
            const std::size_t visible = offset + i + 1;
            const double* p = probs.data() + (h * t + i) * total;
            const double* grow = g + i * d + c0;
            double dot = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += grow[c] * vd[j * d + c0 + c];
              dp[j] = s;
              dot += p[j] * s;
              if (gv) {
                for (std::size_t c = 0; c < dh; ++c) gv[j * d + c0 + c] += p[j] * grow[c];
              }
            }
            for (std::size_t j = 0; j < visible; ++j) {
              const double ds = p[j] * (dp[j] - dot) * sc;
              if (ds == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (gq) gq[i * d + c0 + c] += ds * kd[j * d + c0 + c];
                if (gk) gk[j * d + c0 + c] += ds * qd[i * d + c0 + c];
              }
            }
          }
        }
      });
}

Tensor nll_sum(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id, std::size_t* counted) {
  require_rank2(logits, "nll_sum");
  const std::size_t t = logits.rows(), vocab = logits.cols();
  if (targets.size() != t) {
    throw Error(ErrorKind::kDimension, std::to_string(targets.size()) + " targets for " + shape_to_string(logits.shape()));
  }
  auto ln = node_of(logits);
  require_finite(ln->data, "nll_sum");
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<double> lse(t, 0.0);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (tgt[i] == ignore_id) continue;
    if (tgt[i] >= vocab) {
      throw Error(ErrorKind::kVocabulary,
                  "target " + std::to_string(tgt[i]) + " at row " + std::to_string(i) + " exceeds " + std::to_string(vocab));
    }
    const double* row = ln->data.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - row[tgt[i]];
    ++used;
  }
  if (counted) *counted = used;
  return make_result({}, {total}, "nll_sum", {logits},
                     [ln, tgt = std::move(tgt), lse = std::move(lse), vocab, ignore_id](Node& self) {
                       if (!ln->requires_grad) return;
                       auto& g = ln->ensure_grad();
                       const double up = self.grad[0];
                       for (std::size_t i = 0; i < tgt.size(); ++i) {
                         if (tgt[i] == ignore_id) continue;
                         const double* row = ln->data.data() + i * vocab;
                         double* grow = g.data() + i * vocab;
                         for (std::size_t j = 0; j < vocab; ++j) grow[j] += up * std::exp(row[j] - lse[i]);
                         grow[tgt[i]] -= up;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId ignore_id) {
  std::size_t used = 0;
  Tensor total = nll_sum(logits, targets, ignore_id, &used);
  if (used == 0) throw Error(ErrorKind::kDegenerateBatch, "every target position is ignored");
  return scale(total, 1.0 / static_cast<double>(used));
}

}  // namespace tforge
