#include "hfc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hfc {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const MultiScalarFn& f, std::span<const Tensor> inputs) {
  Graph graph(Graph::Mode::inference);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(graph.constant(t));
  return f(graph, vars).value().item();
}

}  // namespace

namespace {

// Visits every coordinate with (input, index, analytic, numeric).
template <typename Visit>
void sweep(const MultiScalarFn& f, std::span<const Tensor> inputs, double step, Visit visit) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Graph graph;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(graph.parameter(t));
    Var loss = f(graph, vars);
    graph.backward(loss);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double original = probe[k][i];
      probe[k][i] = original + step;
      const double up = evaluate(f, probe);
      probe[k][i] = original - step;
      const double down = evaluate(f, probe);
      probe[k][i] = original;
      visit(k, i, analytic[k][i], (up - down) / (2.0 * step));
    }
  }
}

}  // namespace

std::vector<double> finite_diff_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double step) {
  std::vector<double> worst(inputs.size(), 0.0);
  sweep(f, inputs, step, [&](std::size_t k, std::size_t, double a, double n) {
    worst[k] = std::max(worst[k], relative_error(a, n));
  });
  return worst;
}

FiniteDiffReport finite_diff_report(const MultiScalarFn& f, std::span<const Tensor> inputs, double step) {
  FiniteDiffReport r;
  sweep(f, inputs, step, [&](std::size_t k, std::size_t i, double a, double n) {
    const double e = relative_error(a, n);
    if (e > r.max_error) r = {e, k, i, a, n};
  });
  return r;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double step) {
  const MultiScalarFn wrapped = [&f](Graph& g, std::span<const Var> vars) { return f(g, vars[0]); };
  return finite_diff_check(wrapped, std::span<const Tensor>(&x, 1), step).front();
}

}  // namespace hfc
