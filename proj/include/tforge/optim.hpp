// Copyright 2026 The tforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "tforge/tensor.hpp"

namespace tforge {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void zero_grad();
  // Applies one update from the gradients currently held by the parameters.
  // Returns the pre-clip global gradient norm.
  double step();
  long steps_taken() const { return step_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace tforge
