#pragma once

// Finite-difference oracles and small fixtures shared by the test binaries.
// The oracles only evaluate forward values; they never read tape gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "fedbiot/compute/ops.hpp"
#include "fedbiot/model/transformer.hpp"

namespace fedbiot::testing {

inline Array<double> random_array(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Array<double> a(std::move(shape));
  for (auto& v : a.values()) v = n(rng);
  return a;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

using OpBuilder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Compares the tape gradient of sum(w * op(inputs)) against central finite
// differences of the same forward expression. `differentiable[i]` selects
// which inputs are leaves. Returns the worst relative error over inputs.
inline double op_gradient_error(const OpBuilder& op, std::vector<Array<double>> inputs,
                                const std::vector<bool>& differentiable, std::uint64_t seed, double h = 1e-5) {
  std::mt19937_64 rng(seed);
  Array<double> weights;
  auto evaluate = [&](const std::vector<Array<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const Array<double>& out = op(tape, vars).value();
    if (weights.empty()) weights = random_array(out.shape(), rng);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
  };
  evaluate(inputs);

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(differentiable[i] ? tape.leaf(inputs[i]) : tape.constant(inputs[i]));
  tape.backward(op(tape, vars), weights);

  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    const Array<double>& analytic = tape.grad(vars[i]);
    std::vector<double> a(analytic.values().begin(), analytic.values().end()), n(a.size());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      n[j] = (evaluate(plus) - evaluate(minus)) / (2 * h);
    }
    worst = std::max(worst, relative_error(a, n));
  }
  return worst;
}

// Central differences of `f` along `directions` random unit directions in the
// joint space of `params`, against the projection of the analytic gradient.
// Parameters are restored bit-exactly afterwards. Returns the worst
// per-direction relative error.
inline double directional_gradient_error(const std::vector<Array<double>*>& params,
                                         const std::vector<Array<double>>& grads, const std::function<double()>& f,
                                         std::size_t directions, std::uint64_t seed, double h = 1e-5) {
  std::mt19937_64 rng(seed);
  std::vector<Array<double>> saved;
  for (auto* p : params) saved.push_back(*p);
  double worst = 0;
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<Array<double>> u;
    double norm = 0;
    for (auto* p : params) {
      u.push_back(random_array(p->shape(), rng));
      for (double v : u.back().values()) norm += v * v;
    }
    norm = std::sqrt(norm);
    double analytic = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < u[i].size(); ++j) {
        u[i][j] /= norm;
        analytic += grads[i][j] * u[i][j];
      }
    auto shifted = [&](double step) {
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < u[i].size(); ++j) (*params[i])[j] = saved[i][j] + step * u[i][j];
      return f();
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = saved[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

inline ModelConfig tiny_model_config(std::uint64_t seed = 7) {
  return ModelConfig{.n_layers = 4, .d_model = 16, .n_heads = 2, .d_ff = 24, .vocab_size = 64, .max_seq_len = 32,
                     .rng_seed = seed};
}

}  // namespace fedbiot::testing
