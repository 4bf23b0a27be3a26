#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cstl/param_set.hpp"

namespace cstl {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  bool ok = true;  // false when a probe produced a non-finite loss
  std::string message;
};

// Central-difference check of analytic gradients, in double precision.
// loss_fn evaluates the scalar objective over the current parameter values;
// grad_fn zeroes the accumulators, reruns the graph and fills them.
// Frozen (non-trainable) parameters are excluded and contribute error 0.
template <typename LossFn, typename GradFn>
GradCheckReport grad_check(ParamSet<double>& params, LossFn&& loss_fn,
                           GradFn&& grad_fn, double eps = 1e-6) {
  GradCheckReport report;
  grad_fn();

  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    analytic.push_back(params[p].grad);
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    if (!param.trainable) continue;
    for (std::int64_t i = 0; i < param.value.numel(); ++i) {
      const double saved = param.value.data()[i];
      param.value.data()[i] = saved + eps;
      const double plus = loss_fn();
      param.value.data()[i] = saved - eps;
      const double minus = loss_fn();
      param.value.data()[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.ok = false;
        report.message = "non-finite loss while probing " + param.name +
                         "[" + std::to_string(i) + "]";
        return report;
      }
      const double fd = (plus - minus) / (2.0 * eps);
      const double rel = std::abs(analytic[p].data()[i] - fd) /
                         std::max(1.0, std::abs(fd));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = param.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace cstl
