#include "scpr/core/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace scpr {
namespace {

double evaluate(const LossFn& loss) {
  Graph<double> g(false);
  const double v = loss(g).value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, ParameterSet<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    Graph<double> g(true);
    Var<double> l = loss(g);
    if (!std::isfinite(l.value()[0])) throw NumericError("grad_check: loss is not finite");
    g.backward(l);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = params[pi];
    if (!p.trainable) continue;
    p.ensure_grad();
    const std::size_t n = p.value.size();
    const std::size_t stride =
        options.max_coords == 0 || options.max_coords >= n ? 1 : n / options.max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      auto at = [&](double offset) {
        p.value[i] = saved + offset;
        return evaluate(loss);
      };
      const double h = options.eps;
      const double numeric =
          options.five_point
              ? (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h)
              : (at(h) - at(-h)) / (2.0 * h);
      p.value[i] = saved;

      const double analytic = p.grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(analytic), std::abs(numeric), options.floor});
      ++report.coords_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_parameter = p.name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace scpr
