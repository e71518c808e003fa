// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kNaN: return "nan";
    case ErrorKind::kDeterminism: return "determinism";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kCache: return "cache";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kDegenerateBatch: return "degenerate-batch";
    case ErrorKind::kArity: return "arity";
    case ErrorKind::kSessionClosed: return "session-closed";
    case ErrorKind::kFeature: return "feature";
    case ErrorKind::kData: return "data";
    case ErrorKind::kStaging: return "staging";
    case ErrorKind::kPipeline: return "pipeline";
    case ErrorKind::kCheckpoint: return "checkpoint";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw Error(ErrorKind::kDimension, "zero extent in shape " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorKind::kDimension, "shape " + shape_to_string(shape) + " does not hold " +
                                           std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw Error(ErrorKind::kContract, "use of undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw Error(ErrorKind::kDimension, "ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({m, n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = stddev * rng.normal();
  return from(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw Error(ErrorKind::kDimension, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  const auto& n = checked(node_);
  if (n.data.size() != 1) throw Error(ErrorKind::kContract, "item() on " + shape_to_string(n.shape));
  return n.data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked(node_);
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

const char* Tensor::op() const { return checked(node_).op; }

bool Tensor::is_leaf() const { return checked(node_).is_leaf(); }

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return from(n.shape, n.data, false);
}

Tape record_tape(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS: parents are emitted before children.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    tape.ops.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::kContract,
                "backward() needs a scalar loss, got " + (loss.defined() ? shape_to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;
  Tape tape = record_tape(loss);
  for (auto* node : tape.ops) {
    if (!node->is_leaf()) {
      node->ensure_grad();
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }
  }
  auto* root = loss.node().get();
  root->ensure_grad()[0] += 1.0;
  for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {

// The floor tracks central-difference roundoff, which grows with |f|; without
// it, coordinates whose true gradient is exactly zero report pure noise.
double relative_error(double analytic, double numeric, double value) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-6 * std::max(1.0, std::abs(value)));
}

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw Error(ErrorKind::kContract, "grad_check eps must lie in (0, 1e-2]");
}

}  // namespace

double grad_check_leaves(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double eps) {
  check_eps(eps);
  std::vector<Tensor> params = leaves;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  const Tensor first = f();
  {
    NoGradGuard guard;
    const double again = f().item();
    if (again != first.item()) {
      throw Error(ErrorKind::kDeterminism, "function returned two different values for identical input");
    }
  }
  backward(first);

  double worst = 0.0;
  NoGradGuard guard;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f().item();
      values[i] = saved - eps;
      const double minus = f().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * eps), first.item()));
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.clone();
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace tforge
