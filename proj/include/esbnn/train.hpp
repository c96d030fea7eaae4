#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "esbnn/dataio.hpp"
#include "esbnn/model.hpp"

namespace esbnn {

enum class SteMode { Clip, Polynomial };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;
  SteMode ste_mode = SteMode::Clip;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  bool augment = true;

  void validate() const;
};

/// Smooth function whose derivative the STE uses in place of sign'(x):
/// clip -> clamp(x, -1, 1); polynomial -> piecewise quadratic reaching +-1 at |x| = 1.
float surrogate_sign(float x, SteMode mode);
/// Derivative of surrogate_sign.
float surrogate_sign_grad(float x, SteMode mode);

/// grad_out * surrogate_sign_grad(x_latent) elementwise.
RealTensor ste_activation_grad(const RealTensor& grad_out, const RealTensor& x_latent, SteMode mode);

/// grad_out where |w| <= 1, zero elsewhere.
RealTensor weight_binarize_backward(const RealTensor& grad_out, const RealTensor& w_latent);

/// How binarized layers evaluate sign() during a differentiable forward.
enum class ForwardKind {
  Binary,     // exact sign, straight-through gradients
  Surrogate,  // the smooth surrogate itself, so gradients are exact derivatives
};

/// One gradient slot per entry of Model::parameters(), same order and sizes.
using Gradients = std::vector<std::vector<float>>;

struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

/// Training-mode forward (batch-statistics BN, running stats updated) plus
/// mean softmax cross-entropy. If `grads` is non-null it is resized and filled.
/// `probe` sees the stem output (layer 0) and every block output, like Model::infer.
StepResult forward_backward(Model& model, const RealTensor& images, std::span<const int> labels, ForwardKind kind,
                            SteMode ste, Gradients* grads, const Probe* probe = nullptr);

/// SGD with momentum and weight decay on real/latent weights (not BN or biases),
/// then clamps binarized-layer latents to [-1, 1].
class SgdMomentum {
 public:
  SgdMomentum(float momentum, float weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(Model& model, const Gradients& grads, float lr);
  /// Momentum buffers, same order as Model::parameters().
  const std::vector<std::vector<float>>& velocity() const { return velocity_; }
  /// Weight decay actually applied to each parameter slot.
  std::vector<float> decay_per_param(const Model& model) const;

 private:
  float momentum_;
  float weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

float learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

/// Deterministic given cfg.seed. Throws DataShapeMismatch or NonFiniteLoss.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                                 const TrainConfig& cfg, std::ostream* log = nullptr);

/// Top-1 accuracy with eval-mode BN and packed kernels.
double evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 256);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<int> predictions;
};
EvalResult evaluate_detailed(const Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Header `epoch,train_loss,train_acc,val_loss,val_acc,lr`.
void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics);

}  // namespace esbnn
