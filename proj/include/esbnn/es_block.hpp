#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "esbnn/bin_kernels.hpp"
#include "esbnn/tensor.hpp"

namespace esbnn {

/// Per-layer expanding-and-shrinking configuration.
///
/// The layer reads `ichn * ctau * cgrp` channels (the previous layer's
/// replicated output), convolves them in `cgrp` groups down to `ochn / ctau`
/// channels, and tiles the result `ctau * ntau * ngrp` times so the next layer
/// sees `ochn * ntau * ngrp` channels.
struct ESBlockSpec {
  std::size_t ichn = 0;
  std::size_t ochn = 0;
  std::size_t k = 3;
  std::size_t stride = 1;
  std::size_t ctau = 1;
  std::size_t ntau = 1;
  std::size_t cgrp = 1;
  std::size_t ngrp = 1;

  std::size_t in_channels() const { return ichn * ctau * cgrp; }
  std::size_t conv_channels() const { return ochn / ctau; }
  std::size_t replication() const { return ctau * ntau * ngrp; }
  std::size_t out_channels() const { return ochn * ntau * ngrp; }
  /// Input channels seen by one group, i.e. the binary reduction depth per tap.
  std::size_t reduction_per_group() const { return ichn * ctau; }

  ConvGeometry geometry() const {
    return {in_channels(), conv_channels(), k, stride, k / 2, cgrp};
  }
  /// 1x1 real-valued shortcut conv in the same expanded/shrunken form.
  ConvGeometry downsample_geometry() const { return {in_channels(), conv_channels(), 1, stride, 0, cgrp}; }
  Shape weight_shape() const { return geometry().weight_shape(); }

  /// Throws InvalidSpec when a factor is zero or ochn is not a multiple of ctau * cgrp.
  void validate() const;

  bool operator==(const ESBlockSpec&) const = default;
};

struct BNParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  BNParams() = default;
  /// gamma = 1, beta = 0, mean = 0, var = 1.
  explicit BNParams(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

/// Batch statistics captured during a training-mode forward for the backward pass.
struct BNCache {
  std::vector<float> mean;
  std::vector<float> inv_std;
  RealTensor normalized;
};

enum class ShortcutMode { ZeroPad, RealDownsampleES };

/// Weights and normalization for the real-valued 1x1 ES shortcut.
struct DownsampleParams {
  RealTensor weights;
  BNParams bn;
};

/// Binary convolution of sign(x) with sign(weights) in ES form.
RealTensor es_conv(const RealTensor& x, const RealTensor& weights, const ESBlockSpec& spec);

/// Tiles the channel axis r times: output channel j is input channel j mod c.
RealTensor replicate_channels(const RealTensor& x, std::size_t r);

/// Per-channel affine normalization. Training mode normalizes with batch
/// statistics and folds them into the running statistics with `p.momentum`;
/// eval mode uses the running statistics. Pass `cache` to keep what backward needs.
RealTensor batchnorm(const RealTensor& x, BNParams& p, bool training, BNCache* cache = nullptr);
RealTensor batchnorm(const RealTensor& x, const BNParams& p);

/// Strided 1x1 real conv in ES form, replicated and normalized (eval mode).
RealTensor real_downsample_es(const RealTensor& shortcut, const ESBlockSpec& spec, const DownsampleParams& ds);

/// Brings a shortcut to `target_c` channels at the block's output resolution.
/// ZeroPad subsamples by `stride` then appends zero channels. RealDownsampleES
/// needs `ds` and `spec`.
RealTensor residual_adapt(const RealTensor& shortcut, std::size_t target_c, std::size_t stride, ShortcutMode mode,
                          const ESBlockSpec* spec = nullptr, const DownsampleParams* ds = nullptr);

/// batchnorm(replicate(es_conv(x))) + shortcut, with BN in eval mode.
RealTensor es_block_forward(const RealTensor& x, const RealTensor& weights, const BNParams& bn,
                            const ESBlockSpec& spec, const RealTensor& shortcut);

}  // namespace esbnn
