// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tforge {

struct WavAudio {
  std::uint32_t sample_rate = 16000;
  std::vector<double> samples;  // [-1, 1]
};

// 16-bit PCM mono RIFF. Samples are clipped to [-1, 1] and scaled by 32767.
std::string encode_wav(std::span<const double> samples, std::uint32_t sample_rate);
WavAudio decode_wav(const std::string& bytes);

void write_wav(const std::string& path, std::span<const double> samples, std::uint32_t sample_rate);
WavAudio read_wav(const std::string& path);

}  // namespace tforge
