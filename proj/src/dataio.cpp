#include "esbnn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "esbnn/error.hpp"

namespace esbnn {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.images = batch_images(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

RealTensor Dataset::batch_images(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  RealTensor out({indices.size(), s.c, s.h, s.w});
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= s.n) throw Error(ErrorCode::InvalidArgument, "sample index out of range");
    const auto src = images.sample(indices[j]);
    std::copy(src.begin(), src.end(), out.sample(j).begin());
  }
  return out;
}

Dataset read_cifar10_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw Error(ErrorCode::RecordSizeMismatch, path + ": partial record at byte offset " + std::to_string(offset));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  const std::size_t plane = kCifarSide * kCifarSide;
  Dataset d;
  d.classes = 10;
  d.images = RealTensor({n, 3, kCifarSide, kCifarSide});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= 10) {
      throw Error(ErrorCode::LabelOutOfRange, path + ": label " + std::to_string(rec[0]) + " at byte offset " +
                                                  std::to_string(i * kCifarRecordBytes));
    }
    d.labels[i] = rec[0];
    auto dst = d.images.sample(i);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const float v = static_cast<float>(rec[1 + c * plane + p]) / 255.0f;
        dst[c * plane + p] = (v - kCifarMean[c]) / kCifarStd[c];
      }
    }
  }
  return d;
}

namespace {

Dataset concat(std::vector<Dataset> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset out;
  out.classes = 10;
  out.images = RealTensor({total, 3, kCifarSide, kCifarSide});
  out.labels.reserve(total);
  std::size_t at = 0;
  for (auto& p : parts) {
    std::copy(p.images.vec().begin(), p.images.vec().end(), out.images.vec().begin() + at);
    at += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    p = Dataset{};
  }
  return out;
}

}  // namespace

Cifar10 load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i) {
    const fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p.string());
    train_parts.push_back(read_cifar10_file(p.string()));
  }
  const fs::path test_path = fs::path(dir) / "test_batch.bin";
  if (!fs::exists(test_path)) throw Error(ErrorCode::MissingFile, test_path.string());
  Cifar10 out;
  out.train = concat(std::move(train_parts));
  out.test = read_cifar10_file(test_path.string());
  return out;
}

std::vector<std::size_t> subset_indices(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw Error(ErrorCode::InvalidArgument, "fraction must be in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (take == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " would be empty");
    std::mt19937_64 rng(mix(seed ^ mix(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset subset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (fraction == 1.0) return data;
  const auto idx = subset_indices(data, fraction, seed);
  return data.select(idx);
}

AugmentDraw draw_augment(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  const std::uint64_t r = mix(mix(seed) ^ mix(epoch * 0x1000003ull + 1) ^ mix(index + 0x51ed27ull));
  return {static_cast<std::size_t>(r % 9), static_cast<std::size_t>((r >> 8) % 9), ((r >> 16) & 1u) != 0};
}

void apply_augment(RealTensor& batch, std::size_t n, const AugmentDraw& draw) {
  const Shape& s = batch.shape();
  auto img = batch.sample(n);
  std::vector<float> src(img.begin(), img.end());
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        // (y, x) in the output reads (y + dy - 4, x + dx - 4) of the unpadded source.
        const long sy = static_cast<long>(y + draw.dy) - 4;
        const std::size_t ox = draw.flip ? s.w - 1 - x : x;
        const long sx = static_cast<long>(ox + draw.dx) - 4;
        float v = 0.0f;
        if (sy >= 0 && sx >= 0 && sy < static_cast<long>(s.h) && sx < static_cast<long>(s.w)) {
          v = src[(c * s.h + static_cast<std::size_t>(sy)) * s.w + static_cast<std::size_t>(sx)];
        }
        img[(c * s.h + y) * s.w + x] = v;
      }
    }
  }
}

void augment(RealTensor& batch, std::span<const std::size_t> indices, std::uint64_t seed, std::size_t epoch) {
  for (std::size_t j = 0; j < indices.size(); ++j) apply_augment(batch, j, draw_augment(seed, epoch, indices[j]));
}

Dataset synthetic_blobs(std::size_t classes, std::size_t n, std::uint64_t seed, Shape image, float noise) {
  if (classes == 0) throw Error(ErrorCode::InvalidArgument, "need at least one class");
  std::mt19937_64 proto_rng(mix(0x5eedULL ^ classes));
  std::mt19937_64 rng(mix(seed));
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  constexpr std::size_t kCells = 4;
  const std::size_t plane = image.h * image.w;
  std::vector<float> protos(classes * image.c * plane);
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<float> cells(image.c * kCells * kCells);
    for (float& v : cells) v = proto_rng() & 1 ? 1.0f : -1.0f;
    for (std::size_t c = 0; c < image.c; ++c)
      for (std::size_t y = 0; y < image.h; ++y)
        for (std::size_t x = 0; x < image.w; ++x) {
          const std::size_t cy = y * kCells / image.h, cx = x * kCells / image.w;
          protos[(k * image.c + c) * plane + y * image.w + x] = cells[(c * kCells + cy) * kCells + cx];
        }
  }
  Dataset d;
  d.classes = classes;
  d.images = RealTensor({n, image.c, image.h, image.w});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    d.labels[i] = static_cast<int>(k);
    auto dst = d.images.sample(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = protos[k * image.c * plane + j] + noise * gauss(rng);
  }
  return d;
}

}  // namespace esbnn
