#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocp/diff/graph.hpp"
#include "ocp/diff/tensor.hpp"

namespace ocp::diff {

/// Builds the op under test from one graph input per entry of input_shapes
/// (named "x0", "x1", ... unless input_names is given). The output may have
/// any shape; the checker reduces it to a scalar with a fixed random
/// projection.
struct GradCheckSpec {
  std::vector<Shape> input_shapes;
  std::vector<std::string> input_names;
  std::function<NodeId(Graph&, const std::vector<NodeId>&)> build;
  /// Optional: fills the inputs for one trial. Defaults to U(-1, 1).
  std::function<void(std::vector<Tensor>&, std::mt19937_64&)> sample;
  /// Inputs excluded from differentiation (e.g. fixed data).
  std::vector<bool> constant_inputs;
};

struct GradCheckOptions {
  double eps = 1e-6;
  int trials = 100;
  std::uint64_t seed = 1;
  /// Coordinates probed per input per trial; 0 probes every coordinate.
  std::size_t coords_per_input = 0;
  int max_resamples = 50;
  /// The relative-error denominator is floored at
  /// max(denominator_floor, scale_fraction * max|analytic gradient|), so a
  /// coordinate that is zero by construction (e.g. a bias feeding a softmax)
  /// is judged against the gradient's overall scale, not rounding noise.
  double denominator_floor = 1e-6;
  double scale_fraction = 1e-3;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  int resampled = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-12) {
  return std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
}

/// Central finite differences against backpropagate(). A trial whose point
/// sits on a kink (one-sided slopes disagree) is resampled.
inline GradCheckResult gradient_check(const GradCheckSpec& spec, const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0 && opt.eps <= 1e-3)) throw std::invalid_argument("gradient_check: eps must be in (0, 1e-3]");
  const std::size_t n_in = spec.input_shapes.size();
  if (!spec.input_names.empty() && spec.input_names.size() != n_in) {
    throw std::invalid_argument("gradient_check: input_names and input_shapes differ in length");
  }
  auto name_of = [&](std::size_t i) { return spec.input_names.empty() ? "x" + std::to_string(i) : spec.input_names[i]; };
  std::mt19937_64 rng(opt.seed);

  Graph g;
  std::vector<NodeId> inputs;
  for (std::size_t i = 0; i < n_in; ++i) {
    const bool fixed = i < spec.constant_inputs.size() && spec.constant_inputs[i];
    inputs.push_back(g.input(name_of(i), !fixed));
  }
  const NodeId out = spec.build(g, inputs);

  std::vector<Tensor> values;
  for (const auto& s : spec.input_shapes) values.emplace_back(s);
  Bindings bindings;
  for (std::size_t i = 0; i < n_in; ++i) bindings.bind(name_of(i), values[i]);

  // projection weights are fixed on first use (output shape known after a forward)
  Tensor projection;
  NodeId proj_in{}, scalar{};
  bool built_projection = false;
  auto objective = [&]() -> double {
    const Tensor& y = g.evaluate(bindings, out);
    double s = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) s += projection[j] * y[j];
    return s;
  };

  GradCheckResult result;
  int trial = 0;
  int resamples = 0;
  while (trial < opt.trials) {
    if (spec.sample) {
      spec.sample(values, rng);
    } else {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (auto& t : values) {
        for (auto& v : t.values()) v = u(rng);
      }
    }
    const Tensor& y0 = g.evaluate(bindings, out);
    if (!built_projection) {
      projection = Tensor(y0.shape());
      std::uniform_real_distribution<double> u(0.5, 1.5);
      for (auto& v : projection.values()) v = u(rng);
      proj_in = g.constant(projection.reshaped({1, projection.size()}));
      scalar = g.matmul(proj_in, g.reshape(out, {projection.size(), 1}));
      built_projection = true;
    }
    g.evaluate(bindings, scalar);
    const Gradients grads = g.backpropagate(scalar);

    const double f0 = objective();
    double grad_scale = 0.0;
    for (const auto& [name, gt] : grads) {
      for (double v : gt.values()) grad_scale = std::max(grad_scale, std::abs(v));
    }
    const double floor = std::max(opt.denominator_floor, opt.scale_fraction * grad_scale);
    bool kink = false;
    double trial_max = 0.0;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < n_in && !kink; ++i) {
      const std::string name = name_of(i);
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      Tensor& x = values[i];
      std::vector<std::size_t> coords(x.size());
      for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
      if (opt.coords_per_input && opt.coords_per_input < coords.size()) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opt.coords_per_input);
      }
      for (auto j : coords) {
        const double orig = x[j];
        x[j] = orig + opt.eps;
        const double fp = objective();
        x[j] = orig - opt.eps;
        const double fm = objective();
        x[j] = orig;
        const double right = (fp - f0) / opt.eps;
        const double left = (f0 - fm) / opt.eps;
        if (std::abs(right - left) > 1e-3 * std::max(1.0, std::abs(right) + std::abs(left))) {
          kink = true;
          break;
        }
        const double numeric = (fp - fm) / (2.0 * opt.eps);
        trial_max = std::max(trial_max, relative_error(git->second[j], numeric, floor));
        ++checked;
      }
    }
    if (kink) {
      if (++resamples > opt.max_resamples * opt.trials) {
        throw std::runtime_error("gradient_check: could not find differentiable sample points");
      }
      ++result.resampled;
      continue;
    }
    result.max_relative_error = std::max(result.max_relative_error, trial_max);
    result.coordinates_checked += checked;
    ++trial;
  }
  return result;
}

}  // namespace ocp::diff
