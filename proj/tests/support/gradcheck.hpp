#pragma once

// Central-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "got/autograd.hpp"
#include "got/params.hpp"

namespace got::testing {

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on gradients that
// are numerically zero from reading as a large relative error.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using LossBuilder = std::function<ag::Var(ag::Graph<double>&)>;

// Perturbs up to `per_tensor` evenly spaced entries of every parameter not
// matched by `skip`.
inline GradCheck check_params(ParamStore<double>& store, const LossBuilder& build, std::size_t per_tensor = 10,
                              double eps = 1e-5, const std::function<bool(const std::string&)>& skip = {}) {
  store.zero_grad();
  {
    ag::Graph<double> g;
    g.backward(build(g));
  }
  auto eval = [&] {
    ag::Graph<double> g(false);
    return g.value(build(g))[0];
  };
  GradCheck out;
  for (auto& [name, p] : store.all()) {
    if (skip && skip(name)) continue;
    const std::size_t n = p.value.size();
    const std::size_t step = std::max<std::size_t>(1, n / per_tensor);
    for (std::size_t i = 0; i < n; i += step) {
      const double old = p.value[i];
      p.value[i] = old + eps;
      const double up = eval();
      p.value[i] = old - eps;
      const double down = eval();
      p.value[i] = old;
      const double r = rel_error(p.grad[i], (up - down) / (2 * eps));
      ++out.checked;
      if (r > out.max_rel) {
        out.max_rel = r;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

using InputLossBuilder = std::function<ag::Var(ag::Graph<double>&, ag::Var)>;

// Gradient with respect to a non-parameter input tensor.
inline GradCheck check_input(Tensor<double> input, const InputLossBuilder& build, std::size_t max_entries = 40,
                             double eps = 1e-5) {
  Tensor<double> analytic;
  {
    ag::Graph<double> g;
    const ag::Var x = g.leaf(input);
    g.backward(build(g, x));
    analytic = g.grad(x);
  }
  auto eval = [&] {
    ag::Graph<double> g(false);
    return g.value(build(g, g.constant(input)))[0];
  };
  GradCheck out;
  const std::size_t step = std::max<std::size_t>(1, input.size() / max_entries);
  for (std::size_t i = 0; i < input.size(); i += step) {
    const double old = input[i];
    input[i] = old + eps;
    const double up = eval();
    input[i] = old - eps;
    const double down = eval();
    input[i] = old;
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double r = rel_error(a, (up - down) / (2 * eps));
    ++out.checked;
    if (r > out.max_rel) {
      out.max_rel = r;
      out.worst = "input[" + std::to_string(i) + "]";
    }
  }
  return out;
}

}  // namespace got::testing
