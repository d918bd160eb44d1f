#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "qadpt/tape.hpp"

namespace qadpt {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t below_floor = 0;  // coordinates judged on absolute error
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so coordinates with vanishing gradients are judged on absolute error.
  /// Central differences at step 1e-5 carry about 1e-10 of roundoff for
  /// losses of order 10, so smaller floors cannot resolve a 1e-4 ratio.
  double denominator_floor = 1e-5;
  /// 0 checks every coordinate; otherwise an evenly strided subset per tensor.
  std::size_t max_coords_per_tensor = 0;
};

/// Compares `analytic` against central differences of `loss` w.r.t. every
/// parameter coordinate. Parameters are restored before returning. Failures are
/// reported, never thrown.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  const ParameterList& params, const Gradients& analytic,
                                  const GradCheckOptions& options = {});

}  // namespace qadpt
