#include "esbnn/es_block.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esbnn/error.hpp"

namespace esbnn {

void ESBlockSpec::validate() const {
  if (ichn == 0 || ochn == 0 || ctau == 0 || ntau == 0 || cgrp == 0 || ngrp == 0 || stride == 0) {
    throw Error(ErrorCode::InvalidSpec, "channel counts and scaling factors must be positive");
  }
  if (k == 0 || k % 2 == 0) throw Error(ErrorCode::InvalidSpec, "kernel size must be odd");
  if (ochn % (ctau * cgrp) != 0) {
    throw Error(ErrorCode::InvalidSpec, "ochn=" + std::to_string(ochn) + " is not a multiple of ctau*cgrp=" +
                                            std::to_string(ctau * cgrp));
  }
}

BNParams::BNParams(std::size_t channels)
    : gamma(channels, 1.0f), beta(channels, 0.0f), running_mean(channels, 0.0f), running_var(channels, 1.0f) {}

RealTensor es_conv(const RealTensor& x, const RealTensor& weights, const ESBlockSpec& spec) {
  spec.validate();
  if (x.shape().c != spec.in_channels()) {
    throw Error(ErrorCode::ChannelMismatch, "input has " + std::to_string(x.shape().c) + " channels, spec expects " +
                                                std::to_string(spec.in_channels()));
  }
  const ConvGeometry geom = spec.geometry();
  return binary_conv2d(sign_binarize(x, geom.groups), sign_binarize(weights), geom);
}

RealTensor replicate_channels(const RealTensor& x, std::size_t r) {
  if (r == 0) throw Error(ErrorCode::InvalidArgument, "replication factor must be positive");
  const Shape& s = x.shape();
  RealTensor out({s.n, s.c * r, s.h, s.w});
  const std::size_t block = s.c * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto src = x.sample(n);
    auto dst = out.sample(n);
    for (std::size_t t = 0; t < r; ++t) std::copy(src.begin(), src.end(), dst.begin() + t * block);
  }
  return out;
}

namespace {

void check_bn(const RealTensor& x, const BNParams& p) {
  if (x.shape().c != p.channels() || p.beta.size() != p.channels() || p.running_mean.size() != p.channels() ||
      p.running_var.size() != p.channels()) {
    throw Error(ErrorCode::ChannelMismatch, "batchnorm over " + std::to_string(p.channels()) +
                                                " channels applied to " + std::to_string(x.shape().c));
  }
}

RealTensor normalize_eval(const RealTensor& x, const BNParams& p) {
  const Shape& s = x.shape();
  RealTensor out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const float scale = p.gamma[c] / std::sqrt(p.running_var[c] + p.eps);
    const float shift = p.beta[c] - p.running_mean[c] * scale;
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return out;
}

}  // namespace

RealTensor batchnorm(const RealTensor& x, const BNParams& p) {
  check_bn(x, p);
  return normalize_eval(x, p);
}

RealTensor batchnorm(const RealTensor& x, BNParams& p, bool training, BNCache* cache) {
  check_bn(x, p);
  if (!training) return normalize_eval(x, p);

  const Shape& s = x.shape();
  const std::size_t count = s.n * s.plane();
  RealTensor out(s);
  std::vector<float> mean(s.c), inv_std(s.c);
  RealTensor normalized = cache ? RealTensor(s) : RealTensor();
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (float v : x.plane(n, c)) sum += v;
    const double mu = count ? sum / static_cast<double>(count) : 0.0;
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (float v : x.plane(n, c)) sq += (v - mu) * (v - mu);
    const double var = count ? sq / static_cast<double>(count) : 0.0;
    const double istd = 1.0 / std::sqrt(var + p.eps);
    mean[c] = static_cast<float>(mu);
    inv_std[c] = static_cast<float>(istd);
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        const float xhat = static_cast<float>((src[i] - mu) * istd);
        if (cache) normalized.plane(n, c)[i] = xhat;
        dst[i] = p.gamma[c] * xhat + p.beta[c];
      }
    }
    const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
    p.running_mean[c] = (1.0f - p.momentum) * p.running_mean[c] + p.momentum * static_cast<float>(mu);
    p.running_var[c] = (1.0f - p.momentum) * p.running_var[c] + p.momentum * static_cast<float>(unbiased);
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return out;
}

RealTensor real_downsample_es(const RealTensor& shortcut, const ESBlockSpec& spec, const DownsampleParams& ds) {
  spec.validate();
  if (shortcut.shape().c != spec.in_channels()) {
    throw Error(ErrorCode::ChannelMismatch, "shortcut has " + std::to_string(shortcut.shape().c) +
                                                " channels, spec expects " + std::to_string(spec.in_channels()));
  }
  const RealTensor conv = float_conv2d(shortcut, ds.weights, spec.downsample_geometry());
  return batchnorm(replicate_channels(conv, spec.replication()), ds.bn);
}

RealTensor residual_adapt(const RealTensor& shortcut, std::size_t target_c, std::size_t stride, ShortcutMode mode,
                          const ESBlockSpec* spec, const DownsampleParams* ds) {
  const Shape& s = shortcut.shape();
  if (target_c < s.c) {
    throw Error(ErrorCode::TargetTooSmall,
                "target " + std::to_string(target_c) + " < shortcut channels " + std::to_string(s.c));
  }
  if (stride == 0) throw Error(ErrorCode::InvalidArgument, "stride must be positive");
  if (target_c == s.c && stride == 1) return shortcut;

  if (mode == ShortcutMode::RealDownsampleES) {
    if (spec == nullptr || ds == nullptr) {
      throw Error(ErrorCode::InvalidArgument, "real_downsample_es needs block spec and parameters");
    }
    if (spec->out_channels() != target_c || spec->stride != stride) {
      throw Error(ErrorCode::ShapeMismatch, "downsample spec does not produce the requested target");
    }
    return real_downsample_es(shortcut, *spec, *ds);
  }

  const std::size_t oh = (s.h + stride - 1) / stride;
  const std::size_t ow = (s.w + stride - 1) / stride;
  RealTensor out({s.n, target_c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) out.at(n, c, y, x) = shortcut.at(n, c, y * stride, x * stride);
  return out;
}

RealTensor es_block_forward(const RealTensor& x, const RealTensor& weights, const BNParams& bn,
                            const ESBlockSpec& spec, const RealTensor& shortcut) {
  RealTensor out = batchnorm(replicate_channels(es_conv(x, weights, spec), spec.replication()), bn);
  if (shortcut.shape() != out.shape()) {
    throw Error(ErrorCode::ChannelMismatch,
                "shortcut " + to_string(shortcut.shape()) + " vs block output " + to_string(out.shape()));
  }
  auto dst = out.data();
  const auto src = shortcut.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

}  // namespace esbnn
