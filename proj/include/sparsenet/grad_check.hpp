#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sparsenet/ops.hpp"
#include "sparsenet/tape.hpp"
#include "sparsenet/tensor.hpp"

namespace sparsenet {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error; below it the check is absolute.
  double floor = 1e-3;
  std::uint64_t seed = 0x5eed;
  // 0 checks every element of every input.
  std::size_t max_elements_per_input = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
  double tolerance = 0.0;
  bool passed = false;
};

// Builds a graph from inputs and returns its output. A null tape means a
// forward-only evaluation.
using GraphFn = std::function<Var<double>(Tape<double>*, const std::vector<Var<double>>&)>;

// Compares tape gradients of sum(output * R), R a fixed random projection,
// against central finite differences for every input that requires grad.
inline GradCheckReport grad_check(const GraphFn& fn, const std::vector<Var<double>>& inputs, double tolerance,
                                  const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  report.tolerance = tolerance;

  for (auto& in : inputs) in->drop_grad();
  Tape<double> tape;
  auto out = fn(&tape, inputs);
  Tensor<double> projection(out->shape());
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : projection.values()) v = out->size() == 1 ? 1.0 : normal(rng);
  auto loss = dot_with(&tape, out, projection);
  tape.backward(loss);

  auto evaluate = [&] {
    auto o = fn(nullptr, inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < o->size(); ++i) acc += (*o)[i] * projection[i];
    return acc;
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = *inputs[k];
    if (!in.requires_grad()) continue;
    const std::vector<double> analytic = in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                                       : std::vector<double>(in.size(), 0.0);
    std::size_t limit = in.size();
    if (opts.max_elements_per_input != 0) limit = std::min(limit, opts.max_elements_per_input);
    for (std::size_t i = 0; i < limit; ++i) {
      const double saved = in[i];
      in[i] = saved + opts.step;
      const double plus = evaluate();
      in[i] = saved - opts.step;
      const double minus = evaluate();
      in[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(analytic[i]), opts.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel_err);
        report.worst = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                       std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace sparsenet
