#include "qadpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace qadpt {

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  const ParameterList& params, const Gradients& analytic,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = params[p].first;
    auto& values = params[p].second->storage();
    const auto& grad = analytic.tensors.at(p).storage();
    const std::size_t n = values.size();
    const std::size_t stride =
        options.max_coords_per_tensor == 0 || n <= options.max_coords_per_tensor
            ? 1
            : (n + options.max_coords_per_tensor - 1) / options.max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss();
      values[i] = saved - options.step;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = grad[i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      entry.below_floor += denom == options.denominator_floor;
      double rel = std::abs(a - numeric) / denom;
      if (!std::isfinite(rel)) rel = INFINITY;
      ++entry.checked;
      if (rel > entry.max_rel_error || entry.checked == 1) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic_at_worst = a;
        entry.numeric_at_worst = numeric;
      }
    }
    entry.pass = entry.max_rel_error <= options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace qadpt
