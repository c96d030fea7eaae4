#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace esbnn {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense (n, c, h, w) float tensor, row-major.
class RealTensor {
 public:
  RealTensor() = default;
  explicit RealTensor(Shape shape, float fill = 0.0f);
  RealTensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[index(n, c, y, x)]; }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  /// Contiguous (h, w) plane of one channel of one sample.
  std::span<float> plane(std::size_t n, std::size_t c) {
    return std::span<float>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const float> plane(std::size_t n, std::size_t c) const {
    return std::span<const float>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  /// All channels of one sample.
  std::span<float> sample(std::size_t n) {
    return std::span<float>(data_).subspan(n * shape_.c * shape_.plane(), shape_.c * shape_.plane());
  }
  std::span<const float> sample(std::size_t n) const {
    return std::span<const float>(data_).subspan(n * shape_.c * shape_.plane(), shape_.c * shape_.plane());
  }

  bool all_finite() const;

  bool operator==(const RealTensor&) const = default;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

/// Throws InvalidArgument naming `where` if any element is NaN or Inf.
void require_finite(const RealTensor& t, const char* where);

/// Sign bits packed along the channel axis, one bit per element, LSB first.
///
/// +1 maps to bit 1 and -1 to bit 0. Channels may be split into `segments`
/// equal slices (one per convolution group); each slice starts on a fresh word
/// so that every group's reduction is word-aligned. Pad bits at the end of a
/// slice are always zero.
///
/// Word layout is column-major over spatial positions: for sample n and pixel
/// (y, x) the column holds `segments * words_per_segment` words.
class BitTensor {
 public:
  BitTensor() = default;
  BitTensor(Shape shape, std::size_t segments);

  const Shape& shape() const { return shape_; }
  std::size_t segments() const { return segments_; }
  std::size_t channels_per_segment() const { return segments_ == 0 ? 0 : shape_.c / segments_; }
  std::size_t words_per_segment() const { return words_per_segment_; }
  std::size_t words_per_column() const { return segments_ * words_per_segment_; }
  /// Zero-filled trailing bits in the final word of each segment.
  std::size_t pad_bits() const { return words_per_segment_ * 64 - channels_per_segment(); }

  std::span<std::uint64_t> words() { return words_; }
  std::span<const std::uint64_t> words() const { return words_; }

  std::size_t column_offset(std::size_t n, std::size_t y, std::size_t x) const {
    return ((n * shape_.h + y) * shape_.w + x) * words_per_column();
  }

  bool bit(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;
  void set_bit(std::size_t n, std::size_t c, std::size_t y, std::size_t x, bool value);

  bool operator==(const BitTensor&) const = default;

 private:
  Shape shape_{};
  std::size_t segments_ = 1;
  std::size_t words_per_segment_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Packs a tensor whose elements are exactly +1 or -1. Throws NonBinaryInput otherwise.
BitTensor pack_signs(const RealTensor& t, std::size_t segments = 1);

RealTensor unpack(const BitTensor& b);

/// Same logical bits, re-laid-out with a different segment count.
BitTensor regroup(const BitTensor& b, std::size_t segments);

}  // namespace esbnn
