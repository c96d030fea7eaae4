#include "esbnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "esbnn/bin_kernels.hpp"
#include "esbnn/error.hpp"

namespace esbnn {

namespace {

void fill_uniform(RealTensor& t, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data()) v = dist(rng);
}

}  // namespace

Model::Model(ArchSpec arch, std::uint64_t seed) : arch_(std::move(arch)) {
  require_valid(arch_);
  std::mt19937_64 rng(seed);

  const ConvGeometry stem_geom{arch_.in_c, arch_.stem.out_c, arch_.stem.k, arch_.stem.stride, arch_.stem.k / 2, 1};
  stem.weights = RealTensor(stem_geom.weight_shape());
  fill_uniform(stem.weights, std::sqrt(6.0f / static_cast<float>(arch_.in_c * arch_.stem.k * arch_.stem.k)), rng);
  stem.bn = BNParams(arch_.stem_channels());

  blocks.clear();
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const ESBlockSpec& spec = arch_.layers[i];
    BlockParams b;
    b.weights = RealTensor(spec.weight_shape());
    const float fan_in = static_cast<float>(spec.reduction_per_group() * spec.k * spec.k);
    fill_uniform(b.weights, std::min(1.0f, std::sqrt(6.0f / fan_in)), rng);
    b.bn = BNParams(spec.out_channels());
    if (arch_.shortcut_plan(i) == ShortcutPlan::Downsample) {
      DownsampleParams ds;
      ds.weights = RealTensor(spec.downsample_geometry().weight_shape());
      fill_uniform(ds.weights, std::sqrt(6.0f / static_cast<float>(spec.reduction_per_group())), rng);
      ds.bn = BNParams(spec.out_channels());
      b.downsample = std::move(ds);
    }
    blocks.push_back(std::move(b));
  }

  const std::size_t in_features = arch_.fc_in_features();
  fc.weights = RealTensor({arch_.classes, in_features, 1, 1});
  fill_uniform(fc.weights, 1.0f / std::sqrt(static_cast<float>(in_features)), rng);
  fc.bias.assign(arch_.classes, 0.0f);
}

std::vector<ParamView> Model::parameters() {
  std::vector<ParamView> out;
  auto add_bn = [&](const std::string& prefix, BNParams& bn) {
    out.push_back({prefix + ".gamma", bn.gamma, ParamKind::BnAffine});
    out.push_back({prefix + ".beta", bn.beta, ParamKind::BnAffine});
    out.push_back({prefix + ".running_mean", bn.running_mean, ParamKind::BnStat});
    out.push_back({prefix + ".running_var", bn.running_var, ParamKind::BnStat});
  };
  out.push_back({"stem.weight", stem.weights.data(), ParamKind::RealWeight});
  add_bn("stem.bn", stem.bn);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "layer" + std::to_string(i + 1);
    out.push_back({p + ".weight", blocks[i].weights.data(), ParamKind::BinaryLatent});
    add_bn(p + ".bn", blocks[i].bn);
    if (blocks[i].downsample) {
      out.push_back({p + ".downsample.weight", blocks[i].downsample->weights.data(), ParamKind::RealWeight});
      add_bn(p + ".downsample.bn", blocks[i].downsample->bn);
    }
  }
  out.push_back({"fc.weight", fc.weights.data(), ParamKind::RealWeight});
  out.push_back({"fc.bias", fc.bias, ParamKind::Bias});
  return out;
}

std::vector<ConstParamView> Model::parameters() const {
  std::vector<ConstParamView> out;
  for (auto& p : const_cast<Model*>(this)->parameters()) out.push_back({p.name, p.data, p.kind});
  return out;
}

RealTensor maxpool3x3s2(const RealTensor& x, std::vector<std::size_t>* argmax) {
  const Shape& s = x.shape();
  const std::size_t oh = (s.h - 1) / 2 + 1;
  const std::size_t ow = (s.w - 1) / 2 + 1;
  RealTensor out({s.n, s.c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_idx = 0;
          for (long dy = -1; dy <= 1; ++dy) {
            const long iy = static_cast<long>(oy * 2) + dy;
            if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
            for (long dx = -1; dx <= 1; ++dx) {
              const long ix = static_cast<long>(ox * 2) + dx;
              if (ix < 0 || ix >= static_cast<long>(s.w)) continue;
              const std::size_t idx = x.index(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              if (x.vec()[idx] > best) {
                best = x.vec()[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t o = out.index(n, c, oy, ox);
          out.vec()[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
        }
      }
    }
  }
  return out;
}

RealTensor global_avgpool(const RealTensor& x, std::size_t channels) {
  const Shape& s = x.shape();
  if (channels > s.c) throw Error(ErrorCode::ChannelMismatch, "pooling more channels than present");
  RealTensor out({s.n, channels, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (float v : x.plane(n, c)) acc += v;
      out.at(n, c, 0, 0) = static_cast<float>(acc * inv);
    }
  }
  return out;
}

RealTensor fully_connected(const RealTensor& features, const FcParams& fc) {
  const std::size_t n = features.shape().n;
  const std::size_t in = features.shape().c;
  const std::size_t classes = fc.weights.shape().n;
  if (fc.weights.shape().c != in) {
    throw Error(ErrorCode::ChannelMismatch, "fc expects " + std::to_string(fc.weights.shape().c) +
                                                " features, got " + std::to_string(in));
  }
  RealTensor out({n, classes, 1, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.sample(i);
    for (std::size_t k = 0; k < classes; ++k) {
      const auto w = fc.weights.sample(k);
      double acc = fc.bias[k];
      for (std::size_t j = 0; j < in; ++j) acc += static_cast<double>(f[j]) * w[j];
      out.at(i, k, 0, 0) = static_cast<float>(acc);
    }
  }
  return out;
}

std::vector<int> argmax_rows(const RealTensor& logits) {
  const std::size_t n = logits.shape().n;
  const std::size_t k = logits.shape().c * logits.shape().plane();
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.sample(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

RealTensor Model::infer(const RealTensor& images, const Probe* probe) const {
  const Shape& s = images.shape();
  if (s.c != arch_.in_c) {
    throw Error(ErrorCode::DataShapeMismatch, "images have " + std::to_string(s.c) + " channels, arch expects " +
                                                  std::to_string(arch_.in_c));
  }
  const ConvGeometry stem_geom{arch_.in_c, arch_.stem.out_c, arch_.stem.k, arch_.stem.stride, arch_.stem.k / 2, 1};
  RealTensor x = batchnorm(replicate_channels(float_conv2d(images, stem.weights, stem_geom), arch_.stem_replication()),
                           stem.bn);
  if (arch_.stem.maxpool) x = maxpool3x3s2(x);
  if (probe && probe->on_block) probe->on_block(0, Stage::PostResidual, x);

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const ESBlockSpec& spec = arch_.layers[i];
    const BlockParams& b = blocks[i];
    RealTensor shortcut;
    switch (arch_.shortcut_plan(i)) {
      case ShortcutPlan::Identity: shortcut = x; break;
      case ShortcutPlan::Tile: shortcut = replicate_channels(x, spec.out_channels() / spec.in_channels()); break;
      case ShortcutPlan::ZeroPad:
        shortcut = residual_adapt(x, spec.out_channels(), spec.stride, ShortcutMode::ZeroPad);
        break;
      case ShortcutPlan::Downsample:
        shortcut = residual_adapt(x, spec.out_channels(), spec.stride, ShortcutMode::RealDownsampleES, &spec,
                                  &*b.downsample);
        break;
    }
    if (probe && probe->on_block) {
      const RealTensor pre = replicate_channels(es_conv(x, b.weights, spec), spec.replication());
      probe->on_block(i + 1, Stage::PreBN, pre);
      RealTensor post = batchnorm(pre, b.bn);
      probe->on_block(i + 1, Stage::PostBN, post);
      auto d = post.data();
      const auto sc = shortcut.data();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += sc[j];
      probe->on_block(i + 1, Stage::PostResidual, post);
      x = std::move(post);
    } else {
      x = es_block_forward(x, b.weights, b.bn, spec, shortcut);
    }
  }

  const RealTensor features = global_avgpool(x, arch_.fc_in_features());
  if (probe && probe->on_features) probe->on_features(features);
  return fully_connected(features, fc);
}

}  // namespace esbnn
