// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/latency.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "tforge/error.hpp"
#include "tforge/fusion.hpp"

namespace tforge {

namespace {

std::size_t frames_for(double seconds, double rate) {
  if (!(rate > 0.0) || !(seconds > 0.0)) {
    throw Error(ErrorKind::kContract, "chunk duration and frame rate must be positive");
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds * rate)));
}

}  // namespace

std::size_t ChunkPlan::first_frames(double frame_rate) const { return frames_for(first_chunk_seconds, frame_rate); }
std::size_t ChunkPlan::chunk_frames(double frame_rate) const { return frames_for(chunk_seconds, frame_rate); }

VocoderProfile parse_vocoder_profile(std::string_view name) {
  if (name == "direct_codec") return VocoderProfile::kDirectCodec;
  if (name == "flow_matching_proxy") return VocoderProfile::kFlowMatchingProxy;
  throw Error(ErrorKind::kConfig, "unknown vocoder profile '" + std::string(name) + "'");
}

std::string_view to_string(VocoderProfile profile) {
  return profile == VocoderProfile::kDirectCodec ? "direct_codec" : "flow_matching_proxy";
}

void CostModel::validate() const {
  const std::pair<const char*, double> costs[] = {{"thinker_token_ms", thinker_token_ms},
                                                  {"talker_call_ms", talker_call_ms},
                                                  {"direct_codec_chunk_ms", direct_codec_chunk_ms},
                                                  {"flow_proxy_chunk_ms", flow_proxy_chunk_ms}};
  for (const auto& [name, v] : costs) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kContract, std::string("cost ") + name + " must be finite and >= 0, got " +
                                            std::to_string(v));
    }
  }
}

double CostModel::vocoder_chunk_ms(VocoderProfile profile) const {
  return profile == VocoderProfile::kDirectCodec ? direct_codec_chunk_ms : flow_proxy_chunk_ms;
}

std::size_t Scenario::tokens_needed() const {
  return start_tokens ? *start_tokens : text_needed_for(first_frames(), factor);
}

std::size_t Scenario::backbone_calls() const {
  const std::size_t per_call = mode == DecodeMode::kMtp ? mtp_layers + 1 : 1;
  return (first_frames() + per_call - 1) / per_call;
}

StageTimes LatencyReport::mean() const {
  StageTimes m;
  if (repetitions.empty()) return m;
  for (const auto& r : repetitions) {
    m.thinker += r.thinker, m.talker += r.talker, m.vocoder += r.vocoder;
    m.residual += r.residual, m.total += r.total;
  }
  const double n = static_cast<double>(repetitions.size());
  m.thinker /= n, m.talker /= n, m.vocoder /= n, m.residual /= n, m.total /= n;
  return m;
}

StageTimes LatencyReport::standard_error() const {
  StageTimes e;
  const std::size_t n = repetitions.size();
  if (n < 2) return e;
  const StageTimes m = mean();
  auto se = [&](double StageTimes::*field) {
    double ss = 0.0;
    for (const auto& r : repetitions) ss += (r.*field - m.*field) * (r.*field - m.*field);
    return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  };
  e.thinker = se(&StageTimes::thinker);
  e.talker = se(&StageTimes::talker);
  e.vocoder = se(&StageTimes::vocoder);
  e.residual = se(&StageTimes::residual);
  e.total = se(&StageTimes::total);
  return e;
}

LatencyReport simulate_cost(const CostModel& cost, const Scenario& scenario) {
  cost.validate();
  LatencyReport r;
  r.source = "simulate";
  r.mode = std::string(to_string(scenario.mode));
  r.mtp_layers = scenario.mode == DecodeMode::kMtp ? scenario.mtp_layers : 0;
  r.vocoder = std::string(to_string(scenario.vocoder));
  r.first_chunk_frames = scenario.first_frames();
  r.backbone_calls = scenario.backbone_calls();
  r.text_tokens = scenario.tokens_needed();
  StageTimes t;
  t.thinker = static_cast<double>(r.text_tokens) * cost.thinker_token_ms;
  t.talker = static_cast<double>(r.backbone_calls) * cost.talker_call_ms;
  t.vocoder = cost.vocoder_chunk_ms(scenario.vocoder);
  t.total = t.thinker + t.talker + t.vocoder;
  r.repetitions.push_back(t);
  r.chunks.push_back({0, r.first_chunk_frames, t.total});
  return r;
}

namespace {

nlohmann::json stage_json(const StageTimes& t) {
  return {{"thinker_ms", t.thinker}, {"talker_ms", t.talker}, {"vocoder_ms", t.vocoder},
          {"residual_ms", t.residual}, {"total_ms", t.total}};
}

}  // namespace

std::string report_json(const LatencyReport& r) {
  nlohmann::json j;
  j["source"] = r.source;
  j["mode"] = r.mode;
  j["mtp_layers"] = r.mtp_layers;
  j["vocoder"] = r.vocoder;
  j["seed"] = r.seed;
  j["first_chunk_frames"] = r.first_chunk_frames;
  j["backbone_calls"] = r.backbone_calls;
  j["text_tokens"] = r.text_tokens;
  j["underrun"] = r.underrun;
  j["repetitions"] = nlohmann::json::array();
  for (const auto& t : r.repetitions) j["repetitions"].push_back(stage_json(t));
  j["mean"] = stage_json(r.mean());
  j["stderr"] = stage_json(r.standard_error());
  j["chunks"] = nlohmann::json::array();
  for (const auto& c : r.chunks) j["chunks"].push_back({{"index", c.index}, {"frames", c.frames}, {"ready_ms", c.ready_ms}});
  return j.dump(2) + "\n";
}

std::string report_csv(const LatencyReport& r) {
  const StageTimes m = r.mean(), e = r.standard_error();
  std::ostringstream out;
  out.precision(10);
  out << "stage,ms,mean,stderr\n";
  const std::pair<const char*, double StageTimes::*> stages[] = {{"thinker", &StageTimes::thinker},
                                                                 {"talker", &StageTimes::talker},
                                                                 {"vocoder", &StageTimes::vocoder},
                                                                 {"residual", &StageTimes::residual},
                                                                 {"total", &StageTimes::total}};
  for (const auto& [name, field] : stages) {
    for (const auto& t : r.repetitions) out << name << ',' << t.*field << ',' << m.*field << ',' << e.*field << '\n';
  }
  return out.str();
}

namespace {

Scenario reference_scenario(std::string name, double frame_rate, std::size_t mtp_layers, VocoderProfile vocoder) {
  Scenario s;
  s.name = std::move(name);
  s.frame_rate = frame_rate;
  s.mtp_layers = mtp_layers;
  s.mode = mtp_layers > 0 ? DecodeMode::kMtp : DecodeMode::kBackboneOnly;
  s.vocoder = vocoder;
  return s;
}

}  // namespace

CalibrationTargets default_calibration_targets() {
  CalibrationTargets t;
  // Single-codebook semantic tokens at 25 Hz: 20 frames per 0.8 s chunk.
  t.single_codebook = reference_scenario("single_codebook_flow", 25.0, 0, VocoderProfile::kFlowMatchingProxy);
  t.multi_codebook = reference_scenario("multi_codebook_direct", 12.5, 0, VocoderProfile::kDirectCodec);
  t.multi_codebook_mtp = reference_scenario("multi_codebook_mtp4", 12.5, 4, VocoderProfile::kDirectCodec);
  return t;
}

CostModel calibrate_costs(const CalibrationTargets& t, double thinker_token_ms) {
  const Scenario& a = t.single_codebook;
  const Scenario& b = t.multi_codebook;
  const Scenario& c = t.multi_codebook_mtp;
  if (a.vocoder != VocoderProfile::kFlowMatchingProxy || b.vocoder != VocoderProfile::kDirectCodec ||
      c.vocoder != VocoderProfile::kDirectCodec) {
    throw Error(ErrorKind::kContract, "calibration needs one flow-proxy and two direct-codec scenarios");
  }
  if (b.tokens_needed() != c.tokens_needed() || b.backbone_calls() == c.backbone_calls()) {
    throw Error(ErrorKind::kContract, "multi-codebook scenarios must differ only in backbone calls");
  }
  CostModel m;
  m.thinker_token_ms = thinker_token_ms;
  m.talker_call_ms = (t.multi_codebook_ms - t.multi_codebook_mtp_ms) /
                     (static_cast<double>(b.backbone_calls()) - static_cast<double>(c.backbone_calls()));
  m.direct_codec_chunk_ms = t.multi_codebook_ms - static_cast<double>(b.tokens_needed()) * thinker_token_ms -
                            static_cast<double>(b.backbone_calls()) * m.talker_call_ms;
  m.flow_proxy_chunk_ms = t.single_codebook_ms - static_cast<double>(a.tokens_needed()) * thinker_token_ms -
                          static_cast<double>(a.backbone_calls()) * m.talker_call_ms;
  m.validate();
  return m;
}

}  // namespace tforge
