#pragma once

#include <functional>
#include <span>
#include <vector>

namespace layoutgen {

/// Loss at `params`; when `grad` is non-null it receives the analytic gradient.
using ParameterizedLoss = std::function<double(std::span<const double> params, std::vector<double>* grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // max |g_a - g_fd| / max(1, |g_a|, |g_fd|)
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t one_sided = 0;  // coordinates judged by one-sided differences
};

/// Relative gap between forward and backward differences above which the
/// one-sided estimates are consulted. A kink whose gap stays below this moves
/// the central difference by at most half of it, which the 1e-4 acceptance
/// threshold absorbs; smooth curvature rarely reaches it at epsilon = 1e-5.
inline constexpr double kKinkTolerance = 1e-4;

/// Compares the analytic gradient with central differences of step epsilon.
/// Where forward and backward differences disagree by more than
/// kKinkTolerance (relative), the coordinate may sit within epsilon of a kink,
/// so the analytic value is also compared with second-order one-sided
/// differences from each side and the closest estimate counts. A correct
/// (sub)gradient always matches the slope on at least one side.
/// Throws NumericError if the loss is NaN anywhere it is evaluated.
GradCheckResult grad_check(const ParameterizedLoss& loss, std::span<const double> params,
                           double epsilon = 1e-5);

}  // namespace layoutgen
