// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tforge/error.hpp"

namespace tforge {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[at + i]);
  return v;
}

std::uint16_t get_u16(const std::string& in, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in[at]) |
                                    (static_cast<unsigned char>(in[at + 1]) << 8));
}

}  // namespace

std::string encode_wav(std::span<const double> samples, std::uint32_t sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : samples) {
    const double c = std::isfinite(s) ? std::clamp(s, -1.0, 1.0) : 0.0;
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  return out;
}

WavAudio decode_wav(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw Error(ErrorKind::kIo, "not a RIFF/WAVE stream");
  }
  WavAudio audio;
  bool have_format = false;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::string id = bytes.substr(at, 4);
    const std::uint32_t size = get_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) throw Error(ErrorKind::kIo, "truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16 || get_u16(bytes, body) != 1 || get_u16(bytes, body + 2) != 1 || get_u16(bytes, body + 14) != 16) {
        throw Error(ErrorKind::kIo, "only 16-bit PCM mono is supported");
      }
      audio.sample_rate = get_u32(bytes, body + 4);
      have_format = true;
    } else if (id == "data") {
      if (!have_format) throw Error(ErrorKind::kIo, "data chunk before fmt chunk");
      audio.samples.reserve(size / 2);
      for (std::size_t i = 0; i + 1 < size; i += 2) {
        audio.samples.push_back(static_cast<std::int16_t>(get_u16(bytes, body + i)) / 32767.0);
      }
      return audio;
    }
    at = body + size + (size & 1);
  }
  throw Error(ErrorKind::kIo, "no data chunk");
}

void write_wav(const std::string& path, std::span<const double> samples, std::uint32_t sample_rate) {
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = encode_wav(samples, sample_rate);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

WavAudio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_wav(ss.str());
}

}  // namespace tforge
