#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hfc/autodiff.hpp"

namespace hfc {

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

// Products. `transpose_b` multiplies by the transpose of the last two axes of b.
Var matmul(Var a, Var b, bool transpose_b = false);
Var bmm(Var a, Var b, bool transpose_b = false);

// Elementwise, same shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

/// x + y where y's shape equals the trailing axes of x.
Var add_broadcast(Var x, Var y);
/// Stacks `count` copies of y along a new leading axis.
Var broadcast_to(Var y, std::size_t count);

Var scale(Var x, double factor);
Var add_scalar(Var x, double value);
/// Natural log with the input clamped below at `kLogFloor`.
Var log(Var x);
Var exp(Var x);
/// tanh approximation.
Var gelu(Var x);
/// x^p for x >= 0 with 0^0 = 1.
Var pow_scalar(Var x, double exponent);

Var softmax(Var x, std::size_t axis);
/// Normalizes over the last axis, then applies gain and bias of that extent.
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length);
std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes);
Var reshape(Var x, Shape shape);

Var sum(Var x);
Var mean(Var x);
/// Sums over `axis`, removing it.
Var sum_axis(Var x, std::size_t axis);
/// out[r] = x[r, index[r]] for a rank-2 x.
Var pick(Var x, std::span<const std::size_t> index);

/// Constant copy of x on the same record.
Var detach(Var x);

/// x·W + b with x of shape [..., in], W [in, out], b [out].
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);

}  // namespace hfc
