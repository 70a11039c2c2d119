#include "layoutgen/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "layoutgen/errors.hpp"

namespace layoutgen {

GradCheckResult grad_check(const ParameterizedLoss& loss, std::span<const double> params,
                           double epsilon) {
  std::vector<double> analytic;
  const double base = loss(params, &analytic);
  if (std::isnan(base)) throw NumericError("grad_check: loss is NaN at the given parameters");
  if (analytic.size() != params.size())
    throw ArgumentError("grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                        " entries for " + std::to_string(params.size()) + " parameters");

  GradCheckResult result;
  std::vector<double> p(params.begin(), params.end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + epsilon;
    const double plus = loss(p, nullptr);
    p[i] = orig - epsilon;
    const double minus = loss(p, nullptr);
    p[i] = orig;
    if (std::isnan(plus) || std::isnan(minus))
      throw NumericError("grad_check: loss is NaN near parameter " + std::to_string(i));
    const auto rel = [&](double numeric) {
      return std::abs(analytic[i] - numeric) / std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    };
    double numeric = (plus - minus) / (2.0 * epsilon);
    double err = rel(numeric);
    // Forward and backward slopes of a smooth loss differ by about eps * f''.
    // A larger gap means a kink (ReLU switch, clamp) inside [x - eps, x + eps];
    // the analytic gradient is then the slope on the side the point sits on.
    // Second-order one-sided differences over [x, x + eps] and [x - eps, x]
    // measure each side's slope without crossing the kink.
    const double forward = (plus - base) / epsilon, backward = (base - minus) / epsilon;
    if (std::abs(forward - backward) > kKinkTolerance * std::max({1.0, std::abs(forward), std::abs(backward)})) {
      ++result.one_sided;
      const double h = epsilon / 2.0;
      p[i] = orig + h;
      const double plus_half = loss(p, nullptr);
      p[i] = orig - h;
      const double minus_half = loss(p, nullptr);
      p[i] = orig;
      const double right = (-3.0 * base + 4.0 * plus_half - plus) / (2.0 * h);
      const double left = (3.0 * base - 4.0 * minus_half + minus) / (2.0 * h);
      for (const double side : {right, left})
        if (rel(side) < err) {
          err = rel(side);
          numeric = side;
        }
    }
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace layoutgen
