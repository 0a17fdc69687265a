#pragma once

// Central finite-difference oracle for the reverse-mode gradients. It only
// evaluates forward values, so it shares no code with backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cdla/graph.hpp"
#include "cdla/params.hpp"
#include "cdla/rng.hpp"

namespace cdla::testing {

inline constexpr double kFdStep = 1e-5;

struct GradCheck {
  double rel_error = 0.0;
  std::string worst;
};

// ||a - n|| / max(||a||, ||n||), with both-near-zero counted as exact.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  if (scale < 1e-10) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

using InputFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Checks d fn / d input for every entry of every input tensor.
inline GradCheck check_inputs(const InputFn& fn, const std::vector<Tensor>& inputs, double step = kFdStep) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  Var root = fn(g, vars);
  g.backward(root);
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(g.grad(vars[k]).values().begin(), g.grad(vars[k]).values().end());
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = inputs;
        shifted[k][i] += delta;
        Graph h;
        std::vector<Var> hv;
        for (const auto& t : shifted) hv.push_back(h.input(t));
        return fn(h, hv).value().item();
      };
      numeric[i] = (eval(step) - eval(-step)) / (2.0 * step);
    }
    const double e = relative_error(analytic, numeric);
    if (e >= out.rel_error) {
      out.rel_error = e;
      out.worst = "input " + std::to_string(k);
    }
  }
  return out;
}

using ParamFn = std::function<Var(Graph&)>;

// Checks d fn / d params on up to `per_tensor` randomly chosen entries of each
// parameter tensor (all entries when the tensor is small enough).
inline GradCheck check_params(ModelParams& params, const ParamFn& fn, Rng& rng, std::size_t per_tensor = 8,
                              double step = kFdStep) {
  params.zero_grad();
  {
    Graph g;
    g.backward(fn(g));
  }
  GradCheck out;
  std::vector<double> analytic, numeric;
  for (auto& p : params) {
    const Tensor grad = p.grad ? *p.grad : Tensor(p.value.rows(), p.value.cols());
    std::vector<std::size_t> idx;
    if (p.value.size() <= per_tensor) {
      for (std::size_t i = 0; i < p.value.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t j = 0; j < per_tensor; ++j) idx.push_back(rng.below(p.value.size()));
    }
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      auto eval = [&](double delta) {
        p.value[i] = orig + delta;
        Graph h;
        const double v = fn(h).value().item();
        p.value[i] = orig;
        return v;
      };
      analytic.push_back(grad[i]);
      numeric.push_back((eval(step) - eval(-step)) / (2.0 * step));
    }
  }
  out.rel_error = relative_error(analytic, numeric);
  out.worst = "parameters";
  params.zero_grad();
  return out;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace cdla::testing
