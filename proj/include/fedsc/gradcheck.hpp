#pragma once

#include <string>
#include <vector>

#include "fedsc/training.hpp"

namespace fedsc {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-7;
  /// 0 checks every coordinate of touched tensors.
  std::size_t max_coords_per_tensor = 0;
  /// Coordinates sampled from embedding rows the batch never touches.
  std::size_t untouched_samples = 8;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::string tensor;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  /// Analytic gradient is exactly zero on every untouched embedding row and
  /// the finite difference there is exactly zero too.
  bool untouched_rows_zero = true;
};

/// Compares reverse-mode gradients of the batch objective with central
/// finite differences on every tensor of `params`. The median-heuristic
/// gaussian bandwidth and the distillation teacher logits are frozen at the
/// base point first, matching the constants of the reverse pass.
GradCheckReport grad_check(const Network& net, const ParamSet& params,
                           std::span<const EncodedReview* const> batch, LossConfig cfg,
                           const GradCheckOptions& opts = {});

}  // namespace fedsc
