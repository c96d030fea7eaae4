#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esbnn/arch.hpp"
#include "esbnn/es_block.hpp"
#include "esbnn/tensor.hpp"

namespace esbnn {

struct StemParams {
  RealTensor weights;  // (stem.out_c, in_c, k, k), real-valued
  BNParams bn;         // over the replicated stem output
};

struct BlockParams {
  RealTensor weights;  // latent weights, binarized on the forward pass
  BNParams bn;
  std::optional<DownsampleParams> downsample;
};

struct FcParams {
  RealTensor weights;  // (classes, in_features, 1, 1)
  std::vector<float> bias;
};

enum class ParamKind { BinaryLatent, RealWeight, Bias, BnAffine, BnStat };

struct ParamView {
  std::string name;
  std::span<float> data;
  ParamKind kind;
};

struct ConstParamView {
  std::string name;
  std::span<const float> data;
  ParamKind kind;
};

/// Where a block's activations are observed by a probe.
enum class Stage { PreBN, PostBN, PostResidual };

/// Read-only observation hooks for inference. Layer 0 is the stem; blocks are 1..L.
struct Probe {
  std::function<void(std::size_t layer, Stage stage, const RealTensor& t)> on_block;
  /// Pooled, policy-selected (n, in_features) features entering the final FC.
  std::function<void(const RealTensor& features)> on_features;
};

/// Stem, binarized ES blocks and the final FC with their parameters.
class Model {
 public:
  Model() = default;
  /// Validates `arch` (throws InvalidArch) and initializes parameters from `seed`.
  Model(ArchSpec arch, std::uint64_t seed);

  const ArchSpec& arch() const { return arch_; }

  /// Eval-mode forward with packed XNOR-popcount kernels. Returns (n, classes, 1, 1) logits.
  RealTensor infer(const RealTensor& images, const Probe* probe = nullptr) const;

  /// Every tensor in a fixed order; names are stable across runs.
  std::vector<ParamView> parameters();
  std::vector<ConstParamView> parameters() const;

  StemParams stem;
  std::vector<BlockParams> blocks;
  FcParams fc;

 private:
  ArchSpec arch_;
};

/// 3x3 stride-2 padding-1 max pooling; `argmax` (if given) receives flat input indices.
RealTensor maxpool3x3s2(const RealTensor& x, std::vector<std::size_t>* argmax = nullptr);

/// Mean over (h, w) of the first `channels` channels, shaped (n, channels, 1, 1).
RealTensor global_avgpool(const RealTensor& x, std::size_t channels);

/// logits = features . W^T + b
RealTensor fully_connected(const RealTensor& features, const FcParams& fc);

/// Index of the largest logit per sample; ties go to the lowest index.
std::vector<int> argmax_rows(const RealTensor& logits);

}  // namespace esbnn
