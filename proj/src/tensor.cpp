#include "esbnn/tensor.hpp"

#include <cmath>

#include "esbnn/error.hpp"

namespace esbnn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

RealTensor::RealTensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

RealTensor::RealTensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                              " does not match shape " + to_string(shape_));
  }
}

bool RealTensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const RealTensor& t, const char* where) {
  if (!t.all_finite()) throw Error(ErrorCode::InvalidArgument, std::string(where) + ": non-finite value");
}

BitTensor::BitTensor(Shape shape, std::size_t segments) : shape_(shape), segments_(segments) {
  if (segments == 0 || shape.c % segments != 0) {
    throw Error(ErrorCode::GroupsIndivisible,
                std::to_string(shape.c) + " channels into " + std::to_string(segments) + " segments");
  }
  words_per_segment_ = (shape.c / segments + 63) / 64;
  words_.assign(shape.n * shape.h * shape.w * words_per_column(), 0);
}

bool BitTensor::bit(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  const std::size_t cps = channels_per_segment();
  const std::size_t seg = c / cps;
  const std::size_t off = c % cps;
  const std::uint64_t word = words_[column_offset(n, y, x) + seg * words_per_segment_ + off / 64];
  return (word >> (off % 64)) & 1u;
}

void BitTensor::set_bit(std::size_t n, std::size_t c, std::size_t y, std::size_t x, bool value) {
  const std::size_t cps = channels_per_segment();
  const std::size_t seg = c / cps;
  const std::size_t off = c % cps;
  std::uint64_t& word = words_[column_offset(n, y, x) + seg * words_per_segment_ + off / 64];
  const std::uint64_t mask = std::uint64_t{1} << (off % 64);
  word = value ? (word | mask) : (word & ~mask);
}

BitTensor pack_signs(const RealTensor& t, std::size_t segments) {
  const Shape& s = t.shape();
  BitTensor out(s, segments);
  const std::size_t cps = out.channels_per_segment();
  const std::size_t wps = out.words_per_segment();
  auto words = out.words();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t seg = c / cps;
      const std::size_t off = c % cps;
      const auto plane = t.plane(n, c);
      for (std::size_t p = 0; p < plane.size(); ++p) {
        const float v = plane[p];
        if (v != 1.0f && v != -1.0f) {
          throw Error(ErrorCode::NonBinaryInput, "element (" + std::to_string(n) + "," + std::to_string(c) +
                                                     "," + std::to_string(p) + ") = " + std::to_string(v));
        }
        if (v > 0.0f) {
          const std::size_t col = (n * s.h * s.w + p) * segments * wps;
          words[col + seg * wps + off / 64] |= std::uint64_t{1} << (off % 64);
        }
      }
    }
  }
  return out;
}

RealTensor unpack(const BitTensor& b) {
  const Shape& s = b.shape();
  RealTensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out.at(n, c, y, x) = b.bit(n, c, y, x) ? 1.0f : -1.0f;
  return out;
}

BitTensor regroup(const BitTensor& b, std::size_t segments) {
  if (segments == b.segments()) return b;
  const Shape& s = b.shape();
  BitTensor out(s, segments);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x)
        for (std::size_t c = 0; c < s.c; ++c)
          if (b.bit(n, c, y, x)) out.set_bit(n, c, y, x, true);
  return out;
}

}  // namespace esbnn
