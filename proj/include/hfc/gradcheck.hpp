#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hfc/autodiff.hpp"

namespace hfc {

inline constexpr double kGradCheckFloor = 1e-8;

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var(Graph&, Var)>;
using MultiScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Worst coordinate of one check.
struct FiniteDiffReport {
  double max_error = 0.0;
  std::size_t input = 0;  ///< which input tensor
  std::size_t index = 0;  ///< flat element index within it
  double analytic = 0.0;
  double numeric = 0.0;
};

FiniteDiffReport finite_diff_report(const MultiScalarFn& f, std::span<const Tensor> inputs, double step = 1e-5);

/// Compares the recorded gradient of f at x with central differences
/// (f(x+he) - f(x-he)) / 2h and returns the largest relative error.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

/// Same check for a function of several inputs; one error per input.
std::vector<double> finite_diff_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double step = 1e-5);

}  // namespace hfc
