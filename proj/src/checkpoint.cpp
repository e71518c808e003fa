// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "tforge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include "tforge/error.hpp"

namespace tforge {
namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorKind::kCheckpoint, "truncated checkpoint");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto e : tensor.shape()) put_le<std::uint64_t>(out, e);
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

NamedTensors decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) throw Error(ErrorKind::kCheckpoint, "bad magic");
  const auto version = in.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kCheckpoint, "unsupported version " + std::to_string(version));
  }
  NamedTensors tensors;
  while (!in.done()) {
    std::string name(in.take(in.get_le<std::uint32_t>()));
    const auto rank = in.get_le<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(in.get_le<std::uint64_t>());
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
    tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  const std::string bytes = encode_checkpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kCheckpoint, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name) {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& kv) { return kv.first == name; });
  if (it == tensors.end()) throw Error(ErrorKind::kCheckpoint, "missing tensor '" + std::string(name) + "'");
  return it->second;
}

void assign_from(const NamedTensors& source, const NamedTensors& destination) {
  for (const auto& [name, dst] : destination) {
    const Tensor& src = find_tensor(source, name);
    if (src.shape() != dst.shape()) {
      throw Error(ErrorKind::kCheckpoint, "tensor '" + name + "' has shape " + shape_to_string(src.shape()) +
                                              ", expected " + shape_to_string(dst.shape()));
    }
    Tensor target = dst;
    std::copy(src.data().begin(), src.data().end(), target.mutable_data().begin());
  }
}

}  // namespace tforge
