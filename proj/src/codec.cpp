// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tforge/error.hpp"
#include "tforge/rng.hpp"

namespace tforge {
namespace {

double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct Nearest {
  std::size_t index = 0;
  double distance = 0.0;
};

Nearest nearest_entry(const std::vector<double>& book, std::size_t entries, std::size_t width, const double* x) {
  Nearest best{0, squared_distance(book.data(), x, width)};
  for (std::size_t v = 1; v < entries; ++v) {
    const double d = squared_distance(book.data() + v * width, x, width);
    if (d < best.distance) best = {v, d};
  }
  return best;
}

void check_width(const CodecModel& model, std::span<const FeatureFrame> features) {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != model.feature_width()) {
      throw Error(ErrorKind::kFeature, "frame " + std::to_string(i) + " has width " +
                                           std::to_string(features[i].size()) + ", codec expects " +
                                           std::to_string(model.feature_width()));
    }
  }
}

}  // namespace

NamedTensors CodecModel::named() const {
  NamedTensors out;
  for (std::size_t j = 0; j < codebooks.size(); ++j) out.emplace_back("codec.codebook." + std::to_string(j), codebooks[j]);
  out.emplace_back("codec.frame_rate", Tensor::from({1}, {frame_rate}));
  return out;
}

CodecModel CodecModel::from_named(const NamedTensors& tensors) {
  CodecModel model;
  for (std::size_t j = 0;; ++j) {
    const std::string name = "codec.codebook." + std::to_string(j);
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& kv) { return kv.first == name; });
    if (it == tensors.end()) break;
    model.codebooks.push_back(it->second.clone());
  }
  if (model.codebooks.empty()) throw Error(ErrorKind::kCheckpoint, "no codec codebooks in checkpoint");
  model.frame_rate = find_tensor(tensors, "codec.frame_rate").at(0);
  return model;
}

CodecModel CodecModel::random(std::size_t codebooks, std::size_t entries, std::size_t width, double stddev, Rng& rng) {
  CodecModel model;
  for (std::size_t j = 0; j < codebooks; ++j) {
    Tensor book = Tensor::randn({entries, width}, rng, stddev);
    std::fill_n(book.mutable_data().begin(), width, 0.0);
    model.codebooks.push_back(book);
  }
  return model;
}

std::vector<CodebookFrame> rvq_encode(const CodecModel& model, std::span<const FeatureFrame> features) {
  check_width(model, features);
  const std::size_t width = model.feature_width(), entries = model.entries();
  std::vector<CodebookFrame> codes;
  codes.reserve(features.size());
  std::vector<double> residual(width);
  std::vector<std::vector<double>> books;
  for (const auto& b : model.codebooks) books.emplace_back(b.data().begin(), b.data().end());
  for (const auto& f : features) {
    residual.assign(f.begin(), f.end());
    CodebookFrame frame;
    for (const auto& book : books) {
      const Nearest n = nearest_entry(book, entries, width, residual.data());
      frame.tokens.push_back(n.index);
      for (std::size_t i = 0; i < width; ++i) residual[i] -= book[n.index * width + i];
    }
    codes.push_back(std::move(frame));
  }
  return codes;
}

std::vector<FeatureFrame> rvq_decode(const CodecModel& model, std::span<const CodebookFrame> codes,
                                     std::size_t use_codebooks) {
  const std::size_t width = model.feature_width(), entries = model.entries();
  const std::size_t used = use_codebooks == 0 ? model.num_codebooks() : std::min(use_codebooks, model.num_codebooks());
  std::vector<FeatureFrame> out;
  out.reserve(codes.size());
  for (std::size_t m = 0; m < codes.size(); ++m) {
    if (codes[m].arity() != model.num_codebooks()) {
      throw Error(ErrorKind::kArity, "frame " + std::to_string(m) + " has " + std::to_string(codes[m].arity()) +
                                         " codes, codec has " + std::to_string(model.num_codebooks()) + " codebooks");
    }
    FeatureFrame f(width, 0.0);
    for (std::size_t j = 0; j < used; ++j) {
      const TokenId code = codes[m].tokens[j];
      if (code >= entries) {
        throw Error(ErrorKind::kVocabulary, "code " + std::to_string(code) + " in frame " + std::to_string(m) +
                                                " exceeds codebook size " + std::to_string(entries));
      }
      const auto row = model.codebooks[j].data().subspan(code * width, width);
      for (std::size_t i = 0; i < width; ++i) f[i] += row[i];
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<double> rvq_residual_norms(const CodecModel& model, const FeatureFrame& feature) {
  check_width(model, std::span<const FeatureFrame>(&feature, 1));
  const std::size_t width = model.feature_width(), entries = model.entries();
  FeatureFrame residual = feature;
  std::vector<double> norms{std::sqrt(std::inner_product(residual.begin(), residual.end(), residual.begin(), 0.0))};
  for (const auto& b : model.codebooks) {
    const std::vector<double> book(b.data().begin(), b.data().end());
    const Nearest n = nearest_entry(book, entries, width, residual.data());
    for (std::size_t i = 0; i < width; ++i) residual[i] -= book[n.index * width + i];
    norms.push_back(std::sqrt(std::inner_product(residual.begin(), residual.end(), residual.begin(), 0.0)));
  }
  return norms;
}

double mean_squared_error(std::span<const FeatureFrame> a, std::span<const FeatureFrame> b) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::kFeature, "mse over mismatched or empty frame sets");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    if (a[m].size() != b[m].size()) throw Error(ErrorKind::kFeature, "mse over frames of different width");
    for (std::size_t i = 0; i < a[m].size(); ++i) total += (a[m][i] - b[m][i]) * (a[m][i] - b[m][i]);
    count += a[m].size();
  }
  return total / static_cast<double>(count);
}

std::vector<CodebookFrame> codes_to_tokens(std::span<const CodebookFrame> codes) {
  std::vector<CodebookFrame> out(codes.begin(), codes.end());
  for (auto& f : out)
    for (auto& t : f.tokens) t += kReservedTokens;
  return out;
}

std::vector<CodebookFrame> tokens_to_codes(std::span<const CodebookFrame> tokens) {
  std::vector<CodebookFrame> out(tokens.begin(), tokens.end());
  for (auto& f : out)
    for (auto& t : f.tokens) t = t < kReservedTokens ? 0 : t - kReservedTokens;
  return out;
}

namespace {

// Lloyd iterations for one residual stage. points is [count x width].
std::vector<double> train_stage(const std::vector<double>& points, std::size_t count, std::size_t width,
                                std::size_t entries, std::size_t iterations, Rng& rng,
                                std::vector<double>* objective_log) {
  std::vector<double> book(entries * width, 0.0);
  // k-means++ seeding for entries 1..; entry 0 stays at the origin.
  std::vector<double> nearest(count);
  for (std::size_t p = 0; p < count; ++p) {
    nearest[p] = squared_distance(points.data() + p * width, book.data(), width);
  }
  for (std::size_t v = 1; v < entries; ++v) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = count - 1;
      for (std::size_t p = 0; p < count; ++p) {
        u -= nearest[p];
        if (u < 0.0 && nearest[p] > 0.0) {
          pick = p;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(count));
    }
    std::copy_n(points.data() + pick * width, width, book.data() + v * width);
    for (std::size_t p = 0; p < count; ++p) {
      nearest[p] = std::min(nearest[p], squared_distance(points.data() + p * width, book.data() + v * width, width));
    }
  }

  std::vector<std::size_t> assign(count, 0), previous;
  std::vector<double> dist(count), sums(entries * width);
  std::vector<std::size_t> members(entries);
  std::vector<double> mean(width);
  for (std::size_t it = 0; it < iterations; ++it) {
    double objective = 0.0;
    for (std::size_t p = 0; p < count; ++p) {
      const Nearest n = nearest_entry(book, entries, width, points.data() + p * width);
      assign[p] = n.index;
      dist[p] = n.distance;
      objective += n.distance;
    }
    if (objective_log) objective_log->push_back(objective / static_cast<double>(count * width));
    if (assign == previous) break;
    previous = assign;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(members.begin(), members.end(), 0);
    for (std::size_t p = 0; p < count; ++p) {
      ++members[assign[p]];
      for (std::size_t i = 0; i < width; ++i) sums[assign[p] * width + i] += points[p * width + i];
    }
    std::vector<std::size_t> empty;
    for (std::size_t v = 1; v < entries; ++v) {
      if (members[v] == 0) {
        empty.push_back(v);
        continue;
      }
      for (std::size_t i = 0; i < width; ++i) mean[i] = sums[v * width + i] / static_cast<double>(members[v]);
      // The mean is optimal in exact arithmetic; the guard keeps rounding from
      // ever raising a cluster's error.
      double old_error = 0.0, new_error = 0.0;
      for (std::size_t p = 0; p < count; ++p) {
        if (assign[p] != v) continue;
        old_error += squared_distance(points.data() + p * width, book.data() + v * width, width);
        new_error += squared_distance(points.data() + p * width, mean.data(), width);
      }
      if (new_error <= old_error) std::copy(mean.begin(), mean.end(), book.begin() + static_cast<std::ptrdiff_t>(v * width));
    }
    if (!empty.empty()) {
      // Reseed empty clusters onto the points worst served by the current assignment.
      std::vector<std::size_t> order(count);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
      for (std::size_t e = 0; e < empty.size() && e < count && dist[order[e]] > 0.0; ++e) {
        std::copy_n(points.data() + order[e] * width, width, book.data() + empty[e] * width);
      }
    }
  }
  return book;
}

}  // namespace

CodecModel train_codebooks(std::span<const FeatureFrame> frames, const CodecTrainOptions& options, CodecTrainLog* log) {
  if (options.entries < 2) throw Error(ErrorKind::kData, "codebooks need at least two entries");
  if (frames.size() < options.entries) {
    throw Error(ErrorKind::kData, std::to_string(frames.size()) + " training frames for " +
                                      std::to_string(options.entries) + " codebook entries");
  }
  const std::size_t width = frames.front().size();
  if (width == 0) throw Error(ErrorKind::kFeature, "zero-width features");
  for (const auto& f : frames) {
    if (f.size() != width) throw Error(ErrorKind::kFeature, "training frames have mixed widths");
  }
  const std::size_t count = frames.size();
  std::vector<double> residual;
  residual.reserve(count * width);
  for (const auto& f : frames) residual.insert(residual.end(), f.begin(), f.end());

  Rng rng(options.seed);
  CodecModel model;
  model.frame_rate = options.frame_rate;
  if (log) log->objective.clear();
  for (std::size_t stage = 0; stage < options.codebooks; ++stage) {
    std::vector<double>* stage_log = nullptr;
    if (log) stage_log = &log->objective.emplace_back();
    std::vector<double> book = train_stage(residual, count, width, options.entries, options.iterations, rng, stage_log);
    for (std::size_t p = 0; p < count; ++p) {
      const Nearest n = nearest_entry(book, options.entries, width, residual.data() + p * width);
      for (std::size_t i = 0; i < width; ++i) residual[p * width + i] -= book[n.index * width + i];
    }
    model.codebooks.push_back(Tensor::from({options.entries, width}, std::move(book)));
  }
  return model;
}

SynthesisLayout synthesis_layout(std::size_t feature_width, double frame_rate, double sample_rate) {
  if (!(frame_rate > 0.0) || !(sample_rate > 0.0)) throw Error(ErrorKind::kContract, "rates must be positive");
  SynthesisLayout layout;
  layout.samples_per_frame = static_cast<std::size_t>(std::llround(sample_rate / frame_rate));
  const std::size_t step = layout.samples_per_frame / (2 * (feature_width + 1));
  if (feature_width == 0 || step == 0) {
    throw Error(ErrorKind::kContract, std::to_string(layout.samples_per_frame) +
                                          " samples per frame cannot hold " + std::to_string(feature_width) +
                                          " orthogonal tones");
  }
  for (std::size_t k = 0; k < feature_width; ++k) layout.harmonics.push_back((k + 1) * step);
  layout.gain = 1.0 / static_cast<double>(feature_width);
  return layout;
}

namespace {

std::vector<double> basis_table(const SynthesisLayout& layout) {
  const std::size_t s = layout.samples_per_frame;
  std::vector<double> table(layout.harmonics.size() * s);
  for (std::size_t k = 0; k < layout.harmonics.size(); ++k) {
    for (std::size_t n = 0; n < s; ++n) {
      // Reduce the phase modulo one period so every frame sees identical values.
      const std::size_t cycle = (layout.harmonics[k] * n) % s;
      table[k * s + n] = std::sin(2.0 * std::numbers::pi * static_cast<double>(cycle) / static_cast<double>(s));
    }
  }
  return table;
}

}  // namespace

std::vector<double> synth_waveform(std::span<const FeatureFrame> features, double frame_rate, double sample_rate) {
  if (features.empty()) return {};
  const std::size_t width = features.front().size();
  const SynthesisLayout layout = synthesis_layout(width, frame_rate, sample_rate);
  const std::vector<double> table = basis_table(layout);
  const std::size_t s = layout.samples_per_frame;
  std::vector<double> samples(features.size() * s, 0.0);
  for (std::size_t m = 0; m < features.size(); ++m) {
    if (features[m].size() != width) throw Error(ErrorKind::kFeature, "frames have mixed widths");
    double* out = samples.data() + m * s;
    for (std::size_t k = 0; k < width; ++k) {
      const double amp = features[m][k] * layout.gain;
      if (amp == 0.0) continue;
      const double* tone = table.data() + k * s;
      for (std::size_t n = 0; n < s; ++n) out[n] += amp * tone[n];
    }
  }
  return samples;
}

std::vector<FeatureFrame> feature_extract(std::span<const double> samples, std::size_t feature_width,
                                          double frame_rate, double sample_rate) {
  const SynthesisLayout layout = synthesis_layout(feature_width, frame_rate, sample_rate);
  const std::vector<double> table = basis_table(layout);
  const std::size_t s = layout.samples_per_frame;
  const std::size_t frames = samples.size() / s;
  std::vector<FeatureFrame> out(frames, FeatureFrame(feature_width, 0.0));
  for (std::size_t m = 0; m < frames; ++m) {
    const double* in = samples.data() + m * s;
    for (std::size_t k = 0; k < feature_width; ++k) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s; ++n) acc += in[n] * table[k * s + n];
      out[m][k] = acc;
    }
  }
  return out;
}

}  // namespace tforge
