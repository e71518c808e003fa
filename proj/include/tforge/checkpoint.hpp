// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tforge/tensor.hpp"

namespace tforge {

// Ordered name -> tensor list. Order is preserved on disk.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::string_view kCheckpointMagic = "TFORGE1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "TFORGE1" (7 bytes), version u32,
//   per tensor: name_len u32, name bytes, rank u32, rank x u64 extents,
//               numel x f64 payload.
// Records run to end of file.
std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

// Copies values by name into existing tensors; every destination must be
// present with an identical shape.
void assign_from(const NamedTensors& source, const NamedTensors& destination);

const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name);

}  // namespace tforge
