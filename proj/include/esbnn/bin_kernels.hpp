#pragma once

#include <cstddef>

#include "esbnn/tensor.hpp"

namespace esbnn {

/// Convolution geometry shared by the binary and float kernels.
struct ConvGeometry {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t in_per_group() const { return c_in / groups; }
  std::size_t out_per_group() const { return c_out / groups; }
  std::size_t out_extent(std::size_t in) const { return (in + 2 * padding - k) / stride + 1; }
  Shape weight_shape() const { return {c_out, in_per_group(), k, k}; }
  Shape output_shape(const Shape& input) const {
    return {input.n, c_out, out_extent(input.h), out_extent(input.w)};
  }

  /// Throws GroupsIndivisible / InvalidArgument on a malformed geometry.
  void validate() const;
  /// Additionally checks that `input` and `weights` fit this geometry (ShapeMismatch).
  void check_operands(const Shape& input, const Shape& weights) const;
};

/// Elementwise sign with sign(0) = +1, as a dense +-1 tensor.
RealTensor sign(const RealTensor& x);

/// Elementwise sign with sign(0) = +1, packed.
BitTensor sign_binarize(const RealTensor& x, std::size_t segments = 1);

/// XNOR-popcount convolution over in-bounds taps. Parallel over (batch, output row).
///
/// Activations may be packed with any segment count; they are re-laid-out to one
/// segment per group when needed. Weights are (c_out, c_in/groups, k, k) packed
/// with a single segment. Every output entry is an integer in [-m, m] with the
/// parity of m, where m = (c_in/groups) * in-bounds taps.
RealTensor binary_conv2d(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom);

/// Single-threaded reference for binary_conv2d (same arithmetic, sequential loop order).
RealTensor binary_conv2d_serial(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom);

/// Grouped cross-correlation with zero padding, direct nested loops. Serial reference.
RealTensor float_conv_oracle(const RealTensor& a, const RealTensor& w, const ConvGeometry& geom);

/// Grouped cross-correlation via im2col + GEMM, parallel over the batch.
RealTensor float_conv2d(const RealTensor& a, const RealTensor& w, const ConvGeometry& geom);

/// Gradient of float_conv2d with respect to its input.
RealTensor float_conv2d_backward_input(const RealTensor& grad_out, const RealTensor& w,
                                       const ConvGeometry& geom, const Shape& input_shape);

/// Gradient of float_conv2d with respect to its weights. Accumulated over the
/// batch in sample order so the result does not depend on thread count.
RealTensor float_conv2d_backward_weight(const RealTensor& a, const RealTensor& grad_out,
                                        const ConvGeometry& geom);

}  // namespace esbnn
