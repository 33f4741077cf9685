#pragma once

// Central finite-difference oracle for backward(). Only the forward pass is
// used to build the numerical estimate, so it is independent of every
// backward rule it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "facet/tensor.hpp"

namespace facet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor), maximized over every element of every input.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                                 double h = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  {
    auto loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult res;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = loss_fn().item();
      values[i] = saved - h;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[k][i], numeric));
      res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic[k][i] - numeric));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace facet
