#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esbnn/tensor.hpp"

namespace esbnn {

/// Per-channel normalization used for CIFAR-10 (community-standard statistics).
inline constexpr std::array<float, 3> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd = {0.2470f, 0.2435f, 0.2616f};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

struct Dataset {
  RealTensor images;  // (n, c, h, w), already normalized
  std::vector<int> labels;
  std::size_t classes = 10;

  std::size_t size() const { return labels.size(); }
  Dataset select(std::span<const std::size_t> indices) const;
  RealTensor batch_images(std::span<const std::size_t> indices) const;
};

struct Cifar10 {
  Dataset train;
  Dataset test;
};

/// Parses one binary batch file of 3073-byte records (label byte + channel-planar RGB).
Dataset read_cifar10_file(const std::string& path);

/// data_batch_1..5.bin and test_batch.bin from `dir`.
Cifar10 load_cifar10(const std::string& dir);

/// Stratified sample: round(fraction * count) per class, deterministic under `seed`.
/// Output keeps the original relative order.
Dataset subset(const Dataset& data, double fraction, std::uint64_t seed);
std::vector<std::size_t> subset_indices(const Dataset& data, double fraction, std::uint64_t seed);

/// Random crop from a 4-pixel zero-padded image plus optional horizontal flip.
struct AugmentDraw {
  std::size_t dx = 4;  // crop origin in the padded image, in [0, 8]
  std::size_t dy = 4;
  bool flip = false;
};

AugmentDraw draw_augment(std::uint64_t seed, std::size_t epoch, std::size_t index);

/// Applies `draw` to sample `n` of `batch` in place.
void apply_augment(RealTensor& batch, std::size_t n, const AugmentDraw& draw);

/// Augments every sample of `batch`; sample j uses draw_augment(seed, epoch, indices[j]).
void augment(RealTensor& batch, std::span<const std::size_t> indices, std::uint64_t seed, std::size_t epoch);

/// Gaussian clusters around per-class blocky prototype images. Prototypes depend
/// only on `classes` and `image`; `seed` draws the noise, so two seeds give
/// independent splits of the same task.
Dataset synthetic_blobs(std::size_t classes, std::size_t n, std::uint64_t seed, Shape image = {1, 3, 32, 32},
                        float noise = 0.6f);

}  // namespace esbnn
