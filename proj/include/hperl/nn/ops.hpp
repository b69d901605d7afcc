#pragma once

// Differentiable ops. Feature maps are unbatched [C, H, W]; RoI crops and
// fully connected activations carry a leading RoI dimension.

#include <span>
#include <string>
#include <vector>

#include "hperl/nn/tensor.hpp"
#include "hperl/types.hpp"

namespace hperl::nn {

// x [C, H, W], w [O, C, k, k], b [O] -> [O, Ho, Wo] with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              const std::string& name);

// x [C, H, W]; gamma, beta [C]. C must be divisible by groups.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  const std::string& name, double eps = 1e-5);

Tensor relu(const Tensor& x, const std::string& name);

// x [N, In], w [Out, In], b [Out] -> [N, Out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, const std::string& name);

// Per-position channel mixing: x [N, C, P, Q], w [O, C], b [O] -> [N, O, P, Q].
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b, const std::string& name);

// Bilinear crop of `boxes` (given in input coordinates, scaled by
// spatial_scale onto the map) into out_h x out_w bins of features [C, H, W].
// Each bin averages a sampling_ratio^2 grid of samples. Samples use pixel
// centers at integer coordinates after a half-pixel shift, and the map is
// zero outside its extent. Result [N, C, out_h, out_w].
Tensor roi_align(const Tensor& features, std::span<const Box2D> boxes, double spatial_scale,
                 int out_h, int out_w, const std::string& name, int sampling_ratio = 2);

// Max pooling over quantized bins: box corners are rounded to the feature
// grid and bin edges are floored/ceiled, so neighbouring bins may overlap.
// Empty bins yield 0. Result [N, C, out_h, out_w].
Tensor roi_pool(const Tensor& features, std::span<const Box2D> boxes, double spatial_scale,
                int out_h, int out_w, const std::string& name);

// Stacks along dimension 1; all other extents must match.
Tensor concat_channels(const Tensor& a, const Tensor& b, const std::string& name);

// (a + b) / 2 elementwise; shapes must match.
Tensor mean_fuse(const Tensor& a, const Tensor& b, const std::string& name);

// Same values under a new shape of equal element count.
Tensor reshape(const Tensor& x, const Shape& shape, const std::string& name);

Tensor add(const Tensor& a, const Tensor& b, const std::string& name);

// Weighted sum of single-element tensors.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights,
                    const std::string& name);

// A scalar loss whose value and input gradients were computed outside the
// graph. Backward adds upstream * grads[i] to inputs[i].
Tensor external_loss(double value, std::span<const Tensor> inputs,
                     std::vector<std::vector<double>> grads, const std::string& name);

}  // namespace hperl::nn
