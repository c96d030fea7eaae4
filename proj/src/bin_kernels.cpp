#include "esbnn/bin_kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <vector>

#include "esbnn/error.hpp"

namespace esbnn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMatrix>;
using ConstMapRow = Eigen::Map<const RowMatrix>;

// In-bounds tap range [lo, hi) along one axis for output coordinate `o`.
struct TapRange {
  std::size_t lo;
  std::size_t hi;
};

inline TapRange tap_range(std::size_t o, std::size_t stride, std::size_t padding, std::size_t k,
                          std::size_t extent) {
  const long origin = static_cast<long>(o * stride) - static_cast<long>(padding);
  const long lo = std::max(0L, -origin);
  const long hi = std::min(static_cast<long>(k), static_cast<long>(extent) - origin);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

void check_bit_operands(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom) {
  geom.check_operands(a.shape(), w.shape());
  if (w.segments() != 1) throw Error(ErrorCode::ShapeMismatch, "packed weights must use one segment");
}

// Computes output rows [n, oy] for one (sample, row) pair. `a` already has one segment per group.
inline void binary_conv_row(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom,
                            std::size_t n, std::size_t oy, RealTensor& out) {
  const Shape& in = a.shape();
  const std::size_t ow = out.shape().w;
  const std::size_t wps = a.words_per_segment();
  const std::size_t cpg = geom.in_per_group();
  const std::size_t cout_g = geom.out_per_group();
  const long pad = static_cast<long>(a.pad_bits());
  const auto aw = a.words();
  const auto ww = w.words();
  const TapRange ry = tap_range(oy, geom.stride, geom.padding, geom.k, in.h);
  for (std::size_t ox = 0; ox < ow; ++ox) {
    const TapRange rx = tap_range(ox, geom.stride, geom.padding, geom.k, in.w);
    const long taps = static_cast<long>((ry.hi - ry.lo) * (rx.hi - rx.lo));
    const long m = static_cast<long>(cpg) * taps;
    const long correction = pad * taps;
    for (std::size_t o = 0; o < geom.c_out; ++o) {
      const std::size_t g = o / cout_g;
      long matches = 0;
      for (std::size_t ky = ry.lo; ky < ry.hi; ++ky) {
        const std::size_t iy = oy * geom.stride + ky - geom.padding;
        for (std::size_t kx = rx.lo; kx < rx.hi; ++kx) {
          const std::size_t ix = ox * geom.stride + kx - geom.padding;
          const std::uint64_t* ap = aw.data() + a.column_offset(n, iy, ix) + g * wps;
          const std::uint64_t* wp = ww.data() + w.column_offset(o, ky, kx);
          for (std::size_t j = 0; j < wps; ++j) matches += std::popcount(~(ap[j] ^ wp[j]));
        }
      }
      // Zero pad bits XNOR to ones; remove them before forming the dot product.
      out.at(n, o, oy, ox) = static_cast<float>(2 * (matches - correction) - m);
    }
  }
}

// Unfolds one sample's group `g` into a (cpg*k*k) x (oh*ow) row-major matrix.
void im2col(const RealTensor& a, std::size_t n, std::size_t g, const ConvGeometry& geom, std::size_t oh,
            std::size_t ow, float* cols) {
  const Shape& s = a.shape();
  const std::size_t cpg = geom.in_per_group();
  const std::size_t k = geom.k;
  const std::size_t p = oh * ow;
  for (std::size_t c = 0; c < cpg; ++c) {
    const auto plane = a.plane(n, g * cpg + c);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols + ((c * k + ky) * k + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * geom.stride + ky) - static_cast<long>(geom.padding);
          float* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(s.h)) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = plane.data() + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * geom.stride + kx) - static_cast<long>(geom.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(s.w)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, std::size_t n, std::size_t g, const ConvGeometry& geom, std::size_t oh,
                std::size_t ow, RealTensor& grad_in) {
  const Shape& s = grad_in.shape();
  const std::size_t cpg = geom.in_per_group();
  const std::size_t k = geom.k;
  const std::size_t p = oh * ow;
  for (std::size_t c = 0; c < cpg; ++c) {
    auto plane = grad_in.plane(n, g * cpg + c);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * geom.stride + ky) - static_cast<long>(geom.padding);
          if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
          float* dst = plane.data() + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * geom.stride + kx) - static_cast<long>(geom.padding);
            if (ix >= 0 && ix < static_cast<long>(s.w)) dst[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

void ConvGeometry::validate() const {
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0) {
    throw Error(ErrorCode::GroupsIndivisible, "groups=" + std::to_string(groups) + " does not divide c_in=" +
                                                  std::to_string(c_in) + " and c_out=" + std::to_string(c_out));
  }
  if (k == 0 || k % 2 == 0) throw Error(ErrorCode::InvalidArgument, "kernel size must be odd");
  if (stride == 0) throw Error(ErrorCode::InvalidArgument, "stride must be positive");
}

void ConvGeometry::check_operands(const Shape& input, const Shape& weights) const {
  validate();
  if (input.c != c_in) {
    throw Error(ErrorCode::ShapeMismatch,
                "input has " + std::to_string(input.c) + " channels, geometry expects " + std::to_string(c_in));
  }
  if (weights != weight_shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "weights " + to_string(weights) + " do not match " + to_string(weight_shape()));
  }
  if (input.h + 2 * padding < k || input.w + 2 * padding < k) {
    throw Error(ErrorCode::ShapeMismatch, "input " + to_string(input) + " smaller than kernel");
  }
}

RealTensor sign(const RealTensor& x) {
  RealTensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= 0.0f ? 1.0f : -1.0f;
  return out;
}

BitTensor sign_binarize(const RealTensor& x, std::size_t segments) {
  const Shape& s = x.shape();
  BitTensor out(s, segments);
  const std::size_t cps = out.channels_per_segment();
  const std::size_t wps = out.words_per_segment();
  auto words = out.words();
  const std::size_t plane = s.plane();
#pragma omp parallel for schedule(static)
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t word = (c / cps) * wps + (c % cps) / 64;
      const std::uint64_t mask = std::uint64_t{1} << ((c % cps) % 64);
      const auto src = x.plane(n, c);
      std::uint64_t* col = words.data() + n * plane * out.words_per_column();
      for (std::size_t p = 0; p < plane; ++p) {
        if (src[p] >= 0.0f) col[p * out.words_per_column() + word] |= mask;
      }
    }
  }
  return out;
}

RealTensor binary_conv2d(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom) {
  check_bit_operands(a, w, geom);
  const BitTensor grouped = regroup(a, geom.groups);
  RealTensor out(geom.output_shape(a.shape()));
  const std::size_t batch = out.shape().n;
  const std::size_t rows = out.shape().h;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < rows; ++oy) binary_conv_row(grouped, w, geom, n, oy, out);
  return out;
}

RealTensor binary_conv2d_serial(const BitTensor& a, const BitTensor& w, const ConvGeometry& geom) {
  check_bit_operands(a, w, geom);
  const BitTensor grouped = regroup(a, geom.groups);
  RealTensor out(geom.output_shape(a.shape()));
  for (std::size_t n = 0; n < out.shape().n; ++n)
    for (std::size_t oy = 0; oy < out.shape().h; ++oy) binary_conv_row(grouped, w, geom, n, oy, out);
  return out;
}

RealTensor float_conv_oracle(const RealTensor& a, const RealTensor& w, const ConvGeometry& geom) {
  geom.check_operands(a.shape(), w.shape());
  const Shape& s = a.shape();
  RealTensor out(geom.output_shape(s));
  const Shape& os = out.shape();
  const std::size_t cpg = geom.in_per_group();
  const std::size_t cout_g = geom.out_per_group();
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t o = 0; o < os.c; ++o) {
      const std::size_t g = o / cout_g;
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cpg; ++c) {
            for (std::size_t ky = 0; ky < geom.k; ++ky) {
              for (std::size_t kx = 0; kx < geom.k; ++kx) {
                const long iy = static_cast<long>(oy * geom.stride + ky) - static_cast<long>(geom.padding);
                const long ix = static_cast<long>(ox * geom.stride + kx) - static_cast<long>(geom.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
                acc += static_cast<double>(a.at(n, g * cpg + c, static_cast<std::size_t>(iy),
                                                static_cast<std::size_t>(ix))) *
                       w.at(o, c, ky, kx);
              }
            }
          }
          out.at(n, o, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

RealTensor float_conv2d(const RealTensor& a, const RealTensor& w, const ConvGeometry& geom) {
  geom.check_operands(a.shape(), w.shape());
  RealTensor out(geom.output_shape(a.shape()));
  const Shape& os = out.shape();
  const std::size_t kk = geom.in_per_group() * geom.k * geom.k;
  const std::size_t p = os.h * os.w;
  const std::size_t cout_g = geom.out_per_group();
#pragma omp parallel
  {
    std::vector<float> cols(kk * p);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t g = 0; g < geom.groups; ++g) {
        im2col(a, n, g, geom, os.h, os.w, cols.data());
        ConstMapRow wg(w.data().data() + g * cout_g * kk, static_cast<Eigen::Index>(cout_g),
                       static_cast<Eigen::Index>(kk));
        ConstMapRow cm(cols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
        MapRow og(out.plane(n, g * cout_g).data(), static_cast<Eigen::Index>(cout_g),
                  static_cast<Eigen::Index>(p));
        og.noalias() = wg * cm;
      }
    }
  }
  return out;
}

RealTensor float_conv2d_backward_input(const RealTensor& grad_out, const RealTensor& w,
                                       const ConvGeometry& geom, const Shape& input_shape) {
  geom.check_operands(input_shape, w.shape());
  if (grad_out.shape() != geom.output_shape(input_shape)) {
    throw Error(ErrorCode::ShapeMismatch, "grad_out " + to_string(grad_out.shape()));
  }
  RealTensor grad_in(input_shape);
  const Shape& os = grad_out.shape();
  const std::size_t kk = geom.in_per_group() * geom.k * geom.k;
  const std::size_t p = os.h * os.w;
  const std::size_t cout_g = geom.out_per_group();
#pragma omp parallel
  {
    std::vector<float> cols(kk * p);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t g = 0; g < geom.groups; ++g) {
        ConstMapRow wg(w.data().data() + g * cout_g * kk, static_cast<Eigen::Index>(cout_g),
                       static_cast<Eigen::Index>(kk));
        ConstMapRow dg(grad_out.plane(n, g * cout_g).data(), static_cast<Eigen::Index>(cout_g),
                       static_cast<Eigen::Index>(p));
        MapRow cm(cols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
        cm.noalias() = wg.transpose() * dg;
        col2im_add(cols.data(), n, g, geom, os.h, os.w, grad_in);
      }
    }
  }
  return grad_in;
}

RealTensor float_conv2d_backward_weight(const RealTensor& a, const RealTensor& grad_out,
                                        const ConvGeometry& geom) {
  geom.check_operands(a.shape(), geom.weight_shape());
  if (grad_out.shape() != geom.output_shape(a.shape())) {
    throw Error(ErrorCode::ShapeMismatch, "grad_out " + to_string(grad_out.shape()));
  }
  RealTensor grad_w(geom.weight_shape());
  const Shape& os = grad_out.shape();
  const std::size_t kk = geom.in_per_group() * geom.k * geom.k;
  const std::size_t p = os.h * os.w;
  const std::size_t cout_g = geom.out_per_group();
  std::vector<float> cols(kk * p);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t g = 0; g < geom.groups; ++g) {
      im2col(a, n, g, geom, os.h, os.w, cols.data());
      ConstMapRow cm(cols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
      ConstMapRow dg(grad_out.plane(n, g * cout_g).data(), static_cast<Eigen::Index>(cout_g),
                     static_cast<Eigen::Index>(p));
      MapRow wg(grad_w.data().data() + g * cout_g * kk, static_cast<Eigen::Index>(cout_g),
                static_cast<Eigen::Index>(kk));
      wg.noalias() += dg * cm.transpose();
    }
  }
  return grad_w;
}

}  // namespace esbnn
