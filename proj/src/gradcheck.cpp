#include <cmath>
#include <string>

#include "redecode/error.hpp"
#include "redecode/tensor.hpp"

namespace redecode {

namespace {

double evaluate(const ScalarFn& f) {
  Graph g;
  g.set_recording(false);
  const double v = f(g).item();
  if (!std::isfinite(v)) throw DomainError("finite_diff_check: objective evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport compare_with_finite_differences(const ScalarFn& f, std::span<Tensor> inputs,
                                                std::span<const std::vector<double>> analytic,
                                                double epsilon) {
  if (analytic.size() != inputs.size()) throw ContractError("finite_diff_check: one gradient per input required");
  if (!(epsilon > 0.0)) throw ContractError("finite_diff_check: epsilon must be positive");
  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    if (analytic[t].size() != values.size()) {
      throw ShapeError("finite_diff_check: gradient size mismatch for input " + std::to_string(t));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = evaluate(f);
      values[i] = saved - epsilon;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_error || report.coordinates == 1) {
        report.max_error = err;
        report.worst_tensor = t;
        report.worst_index = i;
        report.analytic = analytic[t][i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const ScalarFn& f, std::span<Tensor> inputs, double epsilon) {
  std::vector<bool> saved_flags;
  for (auto& x : inputs) {
    saved_flags.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    const Tensor loss = f(g);
    if (!std::isfinite(loss.item())) throw DomainError("finite_diff_check: objective evaluated to a non-finite value");
    g.backward(loss);
    for (auto& x : inputs) {
      if (x.has_grad()) {
        analytic.emplace_back(x.grad().begin(), x.grad().end());
      } else {
        analytic.emplace_back(x.size(), 0.0);
      }
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(saved_flags[i]);
  return compare_with_finite_differences(f, inputs, analytic, epsilon);
}

double finite_diff_check(const ScalarFn& f, Tensor& input, double epsilon) {
  return finite_diff_check(f, std::span<Tensor>(&input, 1), epsilon).max_error;
}

}  // namespace redecode
