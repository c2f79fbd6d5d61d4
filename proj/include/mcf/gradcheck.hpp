// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of the tape gradients in double precision,
// and the randomized suite run by `multiconv grad-check`.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcf/tensor.hpp"

namespace mcf {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;  // on |a - n| / max(|a|, |n|)
  double abs_floor = 1e-8;  // differences below this pass regardless
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

// `loss` must rebuild a scalar from the current values of `inputs` on every
// call; it is evaluated once under a tape and 2 * numel more times without.
GradCheckResult check_gradients(const std::string& name, const std::function<TensorD()>& loss,
                                const std::vector<TensorD>& inputs,
                                const GradCheckOptions& opts = {});

struct GradSuiteReport {
  std::vector<GradCheckResult> cases;
  double seconds = 0.0;

  bool passed() const;
  double max_rel_error() const;
};

// Every differentiable op, each conv block, the encoder layer under all conv
// blocks and fusions, CTC and a one-layer encoder with its CTC head;
// `repeats` randomized shapes per case.
GradSuiteReport run_grad_suite(std::uint64_t seed, std::size_t repeats = 3,
                               const GradCheckOptions& opts = {},
                               const std::function<void(const GradCheckResult&)>& on_case = {});

}  // namespace mcf
