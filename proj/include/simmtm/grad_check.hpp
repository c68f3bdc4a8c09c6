#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "simmtm/tensor.hpp"

namespace simmtm {

struct GradCheckReport {
  double max_relative_error = 0.0;
  // Location of the worst coordinate, for diagnostics.
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coordinates = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. Error per coordinate is |analytic - numeric| / (|numeric| + 1e-8).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Multi-parameter form: `f` closes over `params` (leaf tensors), which are
// perturbed in place and restored bit-exactly afterwards.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h = 1e-5);

}  // namespace simmtm
