#pragma once

#include <array>
#include <cstdint>
#include <functional>

#include "mrnet/tensor.hpp"

namespace mrnet {

struct Conv2dOpts {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  // groups > 1 gives grouped convolution; groups == channels is depthwise.
  std::int64_t groups = 1;
};

// Output extent of a convolution axis: floor((n + 2p - d(k-1) - 1)/s) + 1.
std::int64_t conv_out_extent(std::int64_t n, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                             std::int64_t dilation);

// Cross-correlation (no kernel flip) of input (B,Cin,H,W) with kernel
// (Cout,Cin/groups,Kh,Kw) plus per-output-channel bias (Cout).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv2dOpts& opts = {},
              Tape* tape = nullptr);

// 2x2 window, stride 2. Backward routes the gradient to the argmax position;
// ties break to the first index in scan order.
Tensor maxpool2d(const Tensor& input, Tape* tape = nullptr);

// Transposed convolution, stride 2, kernel (Cin,Cout,2,2), no bias. Doubles
// both spatial extents exactly.
Tensor upconv2x(const Tensor& input, const Tensor& kernel, Tape* tape = nullptr);

// Elementwise max(0, x); the subgradient at 0 is 0.
Tensor relu(const Tensor& input, Tape* tape = nullptr);

// Affine map input(B,N) * weight(N,M) + bias(M).
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape = nullptr);

// Row softmax of (B,n), computed with max subtraction.
Tensor softmax(const Tensor& input, Tape* tape = nullptr);

// Channel concatenation of (B,Ca,H,W) and (B,Cb,H,W); a occupies the first
// Ca output channels.
Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Spatial mean over H x W: (B,C,H,W) -> (B,C).
Tensor global_avg_pool(const Tensor& input, Tape* tape = nullptr);

// (B,C,H,W) -> (B,C*H*W).
Tensor flatten2d(const Tensor& input, Tape* tape = nullptr);

// Channel standardization (x - mean[c]) / sd[c] of (B,3,H,W).
Tensor standardize(const Tensor& input, const std::array<double, 3>& mean, const std::array<double, 3>& sd,
                   Tape* tape = nullptr);

// Elementwise x^2.
Tensor square(const Tensor& input, Tape* tape = nullptr);

// Scalar sum_i weights[i] * input[i] over the flattened input; the usual way
// to reduce an op's output to a checkable scalar.
Tensor weighted_sum(const Tensor& input, const std::vector<double>& weights, Tape* tape = nullptr);

// Scalar loss rebuilt from the current contents of some tensor of interest;
// passing a null tape requests a forward-only evaluation.
using ScalarFn = std::function<Tensor(Tape*)>;

// Max over elements of x of |analytic - central difference| / max(1, |analytic|).
// f must recompute the same scalar from x's current values on every call.
double finite_diff_check(const ScalarFn& f, Tensor x, double eps = 1e-5);

// Same check restricted to max_elements positions sampled with the given
// seed; used for parameter tensors too large for a full sweep.
double finite_diff_check_sampled(const ScalarFn& f, Tensor x, double eps, std::int64_t max_elements,
                                 std::uint64_t seed);

}  // namespace mrnet
