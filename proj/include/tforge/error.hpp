// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tforge {

enum class ErrorKind {
  kDimension,
  kContract,
  kNaN,
  kDeterminism,
  kVocabulary,
  kCache,
  kAlignment,
  kDegenerateBatch,
  kArity,
  kSessionClosed,
  kFeature,
  kData,
  kStaging,
  kPipeline,
  kCheckpoint,
  kConfig,
  kUsage,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the whole library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tforge
