#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "scpr/core/graph.hpp"

namespace scpr {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-6;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  /// Coordinates checked per parameter; 0 checks all of them.
  std::size_t max_coords = 0;
  /// Five-point stencil instead of the two-point central difference.
  bool five_point = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

/// Builds a fresh graph with `loss` for every evaluation. The loss function
/// must bind parameters through Graph::parameter.
using LossFn = std::function<Var<double>(Graph<double>&)>;

/// Compares reverse-mode gradients of every trainable parameter with central
/// differences. Throws NumericError when the loss is not finite.
GradCheckReport grad_check(const LossFn& loss, ParameterSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace scpr
