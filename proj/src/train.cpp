#include "esbnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "esbnn/bin_kernels.hpp"
#include "esbnn/error.hpp"

namespace esbnn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (momentum < 0.0f || momentum >= 1.0f) throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  if (weight_decay < 0.0f || !std::isfinite(weight_decay))
    throw Error(ErrorCode::InvalidArgument, "weight decay must be non-negative");
}

float surrogate_sign(float x, SteMode mode) {
  if (x < -1.0f) return -1.0f;
  if (x >= 1.0f) return 1.0f;
  if (mode == SteMode::Clip) return x;
  return x < 0.0f ? 2.0f * x + x * x : 2.0f * x - x * x;
}

float surrogate_sign_grad(float x, SteMode mode) {
  if (mode == SteMode::Clip) return (x >= -1.0f && x <= 1.0f) ? 1.0f : 0.0f;
  if (x < -1.0f || x > 1.0f) return 0.0f;
  return x < 0.0f ? 2.0f + 2.0f * x : 2.0f - 2.0f * x;
}

RealTensor ste_activation_grad(const RealTensor& grad_out, const RealTensor& x_latent, SteMode mode) {
  if (grad_out.shape() != x_latent.shape()) throw Error(ErrorCode::ShapeMismatch, "ste: shape mismatch");
  RealTensor out(grad_out.shape());
  const auto g = grad_out.data();
  const auto x = x_latent.data();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * surrogate_sign_grad(x[i], mode);
  return out;
}

RealTensor weight_binarize_backward(const RealTensor& grad_out, const RealTensor& w_latent) {
  if (grad_out.shape() != w_latent.shape()) throw Error(ErrorCode::ShapeMismatch, "ste: shape mismatch");
  RealTensor out(grad_out.shape());
  const auto g = grad_out.data();
  const auto w = w_latent.data();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(w[i]) <= 1.0f ? g[i] : 0.0f;
  return out;
}

namespace {

RealTensor binarize_dense(const RealTensor& x, ForwardKind kind, SteMode mode) {
  if (kind == ForwardKind::Binary) return sign(x);
  RealTensor out(x.shape());
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = surrogate_sign(src[i], mode);
  return out;
}

// Weights always use the clip surrogate: sign on the forward, identity inside [-1, 1] on the backward.
RealTensor binarize_weights(const RealTensor& w, ForwardKind kind) {
  return binarize_dense(w, kind, SteMode::Clip);
}

/// Sums the r channel tiles of `g` back onto c = g.c / r channels.
RealTensor replicate_backward(const RealTensor& g, std::size_t r) {
  const Shape& s = g.shape();
  const std::size_t c = s.c / r;
  RealTensor out({s.n, c, s.h, s.w});
  const std::size_t block = c * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto src = g.sample(n);
    auto dst = out.sample(n);
    for (std::size_t t = 0; t < r; ++t)
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[t * block + i];
  }
  return out;
}

RealTensor bn_backward(const RealTensor& dy, const BNParams& p, const BNCache& cache, std::span<float> dgamma,
                       std::span<float> dbeta) {
  const Shape& s = dy.shape();
  const double m = static_cast<double>(s.n * s.plane());
  RealTensor dx(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto g = dy.plane(n, c);
      const auto xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    dgamma[c] += static_cast<float>(sum_dy_xhat);
    dbeta[c] += static_cast<float>(sum_dy);
    const double k = static_cast<double>(p.gamma[c]) * cache.inv_std[c] / m;
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto g = dy.plane(n, c);
      const auto xh = cache.normalized.plane(n, c);
      auto d = dx.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = static_cast<float>(k * (m * g[i] - sum_dy - xh[i] * sum_dy_xhat));
    }
  }
  return dx;
}

void add_into(std::span<float> dst, std::span<const float> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct Slots {
  std::size_t stem_w = 0, stem_bn = 0;
  std::vector<std::size_t> w, bn, ds_w, ds_bn;
  std::size_t fc_w = 0, fc_b = 0;
};

// Mirrors the order of Model::parameters().
Slots make_slots(const Model& model) {
  Slots s;
  std::size_t i = 0;
  s.stem_w = i++;
  s.stem_bn = i;
  i += 4;
  for (const auto& b : model.blocks) {
    s.w.push_back(i++);
    s.bn.push_back(i);
    i += 4;
    if (b.downsample) {
      s.ds_w.push_back(i++);
      s.ds_bn.push_back(i);
      i += 4;
    } else {
      s.ds_w.push_back(0);
      s.ds_bn.push_back(0);
    }
  }
  s.fc_w = i++;
  s.fc_b = i++;
  return s;
}

struct BlockTape {
  RealTensor input;
  RealTensor act;  // binarized input
  RealTensor wq;   // binarized weights
  Shape conv_shape;
  BNCache bn;
  Shape ds_conv_shape;
  BNCache ds_bn;
};

ConvGeometry stem_geometry(const ArchSpec& a) {
  return {a.in_c, a.stem.out_c, a.stem.k, a.stem.stride, a.stem.k / 2, 1};
}

}  // namespace

StepResult forward_backward(Model& model, const RealTensor& images, std::span<const int> labels, ForwardKind kind,
                            SteMode ste, Gradients* grads, const Probe* probe) {
  const ArchSpec& arch = model.arch();
  const Shape& is = images.shape();
  if (is.c != arch.in_c || labels.size() != is.n) {
    throw Error(ErrorCode::DataShapeMismatch, "batch " + to_string(is) + " with " + std::to_string(labels.size()) +
                                                  " labels does not fit the architecture");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= arch.classes)
      throw Error(ErrorCode::DataShapeMismatch, "label " + std::to_string(y) + " out of range");
  }

  // Forward.
  const ConvGeometry sg = stem_geometry(arch);
  const RealTensor stem_conv = float_conv2d(images, model.stem.weights, sg);
  BNCache stem_cache;
  RealTensor x = batchnorm(replicate_channels(stem_conv, arch.stem_replication()), model.stem.bn, true, &stem_cache);
  const Shape pre_pool = x.shape();
  std::vector<std::size_t> pool_argmax;
  if (arch.stem.maxpool) x = maxpool3x3s2(x, &pool_argmax);
  if (probe != nullptr && probe->on_block) probe->on_block(0, Stage::PostResidual, x);

  std::vector<BlockTape> tape(model.blocks.size());
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const ESBlockSpec& spec = arch.layers[i];
    BlockParams& b = model.blocks[i];
    BlockTape& t = tape[i];
    const ConvGeometry g = spec.geometry();
    t.act = binarize_dense(x, kind, ste);
    t.wq = binarize_weights(b.weights, kind);
    const RealTensor conv = float_conv2d(t.act, t.wq, g);
    t.conv_shape = conv.shape();
    RealTensor out = batchnorm(replicate_channels(conv, spec.replication()), b.bn, true, &t.bn);

    RealTensor shortcut;
    switch (arch.shortcut_plan(i)) {
      case ShortcutPlan::Identity: shortcut = x; break;
      case ShortcutPlan::Tile: shortcut = replicate_channels(x, spec.out_channels() / spec.in_channels()); break;
      case ShortcutPlan::ZeroPad:
        shortcut = residual_adapt(x, spec.out_channels(), spec.stride, ShortcutMode::ZeroPad);
        break;
      case ShortcutPlan::Downsample: {
        const RealTensor dc = float_conv2d(x, b.downsample->weights, spec.downsample_geometry());
        t.ds_conv_shape = dc.shape();
        shortcut = batchnorm(replicate_channels(dc, spec.replication()), b.downsample->bn, true, &t.ds_bn);
        break;
      }
    }
    add_into(out.data(), shortcut.data());
    if (probe != nullptr && probe->on_block) probe->on_block(i + 1, Stage::PostResidual, out);
    t.input = std::move(x);
    x = std::move(out);
  }

  const std::size_t features_n = arch.fc_in_features();
  const RealTensor features = global_avgpool(x, features_n);
  const RealTensor logits = fully_connected(features, model.fc);

  // Softmax cross-entropy.
  const std::size_t n = is.n;
  const std::size_t classes = arch.classes;
  StepResult result;
  RealTensor dlogits({n, classes, 1, 1});
  const std::vector<int> pred = argmax_rows(logits);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = logits.sample(s);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    result.loss += lse - row[static_cast<std::size_t>(labels[s])];
    if (pred[s] == labels[s]) ++result.correct;
    auto d = dlogits.sample(s);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(row[k] - lse);
      d[k] = static_cast<float>((p - (static_cast<int>(k) == labels[s] ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  result.loss /= static_cast<double>(n);
  if (grads == nullptr) return result;

  // Backward.
  const Slots slot = make_slots(model);
  {
    const auto params = model.parameters();
    grads->assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) (*grads)[i].assign(params[i].data.size(), 0.0f);
  }
  Gradients& G = *grads;

  RealTensor dfeat({n, features_n, 1, 1});
  for (std::size_t s = 0; s < n; ++s) {
    const auto d = dlogits.sample(s);
    const auto f = features.sample(s);
    auto df = dfeat.sample(s);
    for (std::size_t k = 0; k < classes; ++k) {
      const auto w = model.fc.weights.sample(k);
      float* gw = G[slot.fc_w].data() + k * features_n;
      G[slot.fc_b][k] += d[k];
      for (std::size_t j = 0; j < features_n; ++j) {
        gw[j] += d[k] * f[j];
        df[j] += d[k] * w[j];
      }
    }
  }

  RealTensor dx(x.shape());
  const float inv_plane = 1.0f / static_cast<float>(x.shape().plane());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < features_n; ++c) {
      const float v = dfeat.at(s, c, 0, 0) * inv_plane;
      for (float& e : dx.plane(s, c)) e = v;
    }

  for (std::size_t ii = model.blocks.size(); ii-- > 0;) {
    const ESBlockSpec& spec = arch.layers[ii];
    BlockParams& b = model.blocks[ii];
    BlockTape& t = tape[ii];
    const Shape in_shape = t.input.shape();
    RealTensor d_in(in_shape);

    switch (arch.shortcut_plan(ii)) {
      case ShortcutPlan::Identity: add_into(d_in.data(), dx.data()); break;
      case ShortcutPlan::Tile:
        add_into(d_in.data(), replicate_backward(dx, spec.out_channels() / spec.in_channels()).data());
        break;
      case ShortcutPlan::ZeroPad: {
        const Shape& os = dx.shape();
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t c = 0; c < in_shape.c; ++c)
            for (std::size_t y = 0; y < os.h; ++y)
              for (std::size_t xx = 0; xx < os.w; ++xx)
                d_in.at(s, c, y * spec.stride, xx * spec.stride) += dx.at(s, c, y, xx);
        break;
      }
      case ShortcutPlan::Downsample: {
        DownsampleParams& ds = *b.downsample;
        const RealTensor drep =
            bn_backward(dx, ds.bn, t.ds_bn, G[slot.ds_bn[ii]], G[slot.ds_bn[ii] + 1]);
        const RealTensor dconv = replicate_backward(drep, spec.replication());
        const ConvGeometry dg = spec.downsample_geometry();
        add_into(G[slot.ds_w[ii]], float_conv2d_backward_weight(t.input, dconv, dg).data());
        add_into(d_in.data(), float_conv2d_backward_input(dconv, ds.weights, dg, in_shape).data());
        break;
      }
    }

    const RealTensor drep = bn_backward(dx, b.bn, t.bn, G[slot.bn[ii]], G[slot.bn[ii] + 1]);
    const RealTensor dconv = replicate_backward(drep, spec.replication());
    const ConvGeometry g = spec.geometry();
    const RealTensor dwq = float_conv2d_backward_weight(t.act, dconv, g);
    add_into(G[slot.w[ii]], weight_binarize_backward(dwq, b.weights).data());
    const RealTensor dact = float_conv2d_backward_input(dconv, t.wq, g, in_shape);
    add_into(d_in.data(), ste_activation_grad(dact, t.input, ste).data());

    t = BlockTape{};
    dx = std::move(d_in);
  }

  if (arch.stem.maxpool) {
    RealTensor unpooled(pre_pool);
    const auto src = dx.data();
    for (std::size_t i = 0; i < src.size(); ++i) unpooled.vec()[pool_argmax[i]] += src[i];
    dx = std::move(unpooled);
  }
  const RealTensor drep = bn_backward(dx, model.stem.bn, stem_cache, G[slot.stem_bn], G[slot.stem_bn + 1]);
  const RealTensor dconv = replicate_backward(drep, arch.stem_replication());
  add_into(G[slot.stem_w], float_conv2d_backward_weight(images, dconv, sg).data());
  return result;
}

void SgdMomentum::step(Model& model, const Gradients& grads, float lr) {
  auto params = model.parameters();
  if (grads.size() != params.size()) throw Error(ErrorCode::InvalidArgument, "gradient slots do not match model");
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i].data.size(), 0.0f);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamView& p = params[i];
    if (p.kind == ParamKind::BnStat) continue;
    if (grads[i].size() != p.data.size()) throw Error(ErrorCode::InvalidArgument, "gradient size mismatch: " + p.name);
    const bool decay = p.kind == ParamKind::BinaryLatent || p.kind == ParamKind::RealWeight;
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const float g = grads[i][j] + (decay ? weight_decay_ * p.data[j] : 0.0f);
      v[j] = momentum_ * v[j] + g;
      p.data[j] -= lr * v[j];
      if (p.kind == ParamKind::BinaryLatent) p.data[j] = std::clamp(p.data[j], -1.0f, 1.0f);
    }
  }
}

std::vector<float> SgdMomentum::decay_per_param(const Model& model) const {
  std::vector<float> out;
  for (const auto& p : model.parameters()) {
    const bool decay = p.kind == ParamKind::BinaryLatent || p.kind == ParamKind::RealWeight;
    out.push_back(decay ? weight_decay_ : 0.0f);
  }
  return out;
}

float learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lr_schedule == LrSchedule::Constant || cfg.epochs == 0) return cfg.learning_rate;
  const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return static_cast<float>(0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * frac)));
}

namespace {

void check_dataset(const Model& model, const Dataset& d, const char* what) {
  const ArchSpec& a = model.arch();
  const Shape& s = d.images.shape();
  if (d.size() == 0) return;
  if (s.n != d.size() || s.c != a.in_c || s.h != a.in_h || s.w != a.in_w || d.classes != a.classes) {
    throw Error(ErrorCode::DataShapeMismatch, std::string(what) + " set " + to_string(s) + " with " +
                                                  std::to_string(d.classes) + " classes does not fit " + a.name);
  }
  for (int y : d.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= a.classes)
      throw Error(ErrorCode::DataShapeMismatch, std::string(what) + " label out of range");
  }
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                 const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  check_dataset(model, train_set, "train");
  check_dataset(model, val_set, "validation");
  if (train_set.size() == 0) throw Error(ErrorCode::DataShapeMismatch, "empty training set");

  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  std::vector<EpochMetrics> metrics;
  std::vector<std::size_t> order(train_set.size());
  Gradients grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = learning_rate_at(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + epoch + 1);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      RealTensor images = train_set.batch_images(idx);
      if (cfg.augment) augment(images, idx, cfg.seed, epoch);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
      const StepResult r = forward_backward(model, images, labels, ForwardKind::Binary, cfg.ste_mode, &grads);
      if (!std::isfinite(r.loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite in epoch " + std::to_string(epoch + 1));
      }
      opt.step(model, grads, lr);
      loss_sum += r.loss * static_cast<double>(idx.size());
      correct += r.correct;
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (val_set.size() > 0) {
      const EvalResult ev = evaluate_detailed(model, val_set);
      m.val_loss = ev.loss;
      m.val_acc = ev.accuracy;
    }
    metrics.push_back(m);
    if (log) {
      *log << std::fixed << std::setprecision(4) << "epoch " << m.epoch << " lr " << m.lr << " train_loss "
           << m.train_loss << " train_acc " << m.train_acc << " val_loss " << m.val_loss << " val_acc " << m.val_acc
           << '\n';
      log->flush();
    }
  }
  return metrics;
}

EvalResult evaluate_detailed(const Model& model, const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  check_dataset(model, data, "evaluation");
  EvalResult r;
  if (data.size() == 0) return r;
  r.predictions.reserve(data.size());
  std::size_t correct = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const RealTensor logits = model.infer(data.batch_images(idx));
    const std::vector<int> pred = argmax_rows(logits);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto row = logits.sample(j);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (float v : row) z += std::exp(v - mx);
      loss += mx + std::log(z) - row[static_cast<std::size_t>(data.labels[idx[j]])];
      if (pred[j] == data.labels[idx[j]]) ++correct;
      r.predictions.push_back(pred[j]);
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.loss = loss / static_cast<double>(data.size());
  return r;
}

double evaluate(const Model& model, const Dataset& data, std::size_t batch_size) {
  return evaluate_detailed(model, data, batch_size).accuracy;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  out << std::setprecision(6);
  for (const auto& m : metrics) {
    out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_loss << ',' << m.val_acc << ','
        << m.lr << '\n';
  }
}

}  // namespace esbnn
