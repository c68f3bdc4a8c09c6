#include "simmtm/grad_check.hpp"

#include <cmath>

namespace simmtm {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  const std::vector<Tensor> params{leaf};
  return grad_check([&] { return f(leaf); }, params, h).max_relative_error;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h) {
  if (h <= 0.0) fail(ErrorKind::kContract, "grad_check: step must be positive");
  for (const auto& p : params) {
    Tensor t = p;
    t.zero_grad();
  }
  f().backward();

  std::vector<Eigen::VectorXd> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    Eigen::VectorXd& values = p.mutable_values();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = f().item();
      values[i] = saved - h;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double error = std::abs(analytic[pi][i] - numeric) / (std::abs(numeric) + 1e-8);
      ++report.coordinates;
      if (error > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = error;
        report.worst_tensor = pi;
        report.worst_index = i;
        report.analytic = analytic[pi][i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace simmtm
