#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the library's arithmetic.

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "esbnn/tensor.hpp"

namespace oracle {

/// Dense +-1 integer cross-correlation with zero padding, no packing, no grouping tricks.
inline std::vector<long> int_conv(const std::vector<int>& a, std::size_t n, std::size_t c, std::size_t h,
                                  std::size_t w, const std::vector<int>& wt, std::size_t oc, std::size_t k,
                                  std::size_t stride, std::size_t pad, std::size_t groups, std::size_t& oh,
                                  std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t cpg = c / groups, opg = oc / groups;
  std::vector<long> out(n * oc * oh * ow, 0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o) {
      const std::size_t g = o / opg;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          long acc = 0;
          for (std::size_t ci = 0; ci < cpg; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                const std::size_t cin = g * cpg + ci;
                acc += a[((b * c + cin) * h + iy) * w + ix] * wt[((o * cpg + ci) * k + ky) * k + kx];
              }
          out[((b * oc + o) * oh + y) * ow + x] = acc;
        }
    }
  return out;
}

/// Every value sum_i a_i * w_i can take for a_i, w_i in {-1, +1}, i < m, by brute force.
inline std::set<int> enumerate_dot_values(std::size_t m) {
  std::set<int> values;
  const std::uint32_t combos = 1u << m;
  for (std::uint32_t av = 0; av < combos; ++av)
    for (std::uint32_t wv = 0; wv < combos; ++wv) {
      int s = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const int ai = (av >> i) & 1u ? 1 : -1;
        const int wi = (wv >> i) & 1u ? 1 : -1;
        s += ai * wi;
      }
      values.insert(s);
    }
  return values;
}

/// Population mean and variance of channel c over (n, h, w), two-pass in long double.
inline void channel_stats(const esbnn::RealTensor& x, std::size_t c, double& mean, double& var) {
  const auto& s = x.shape();
  long double sum = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < s.plane(); ++i) sum += x.vec()[(n * s.c + c) * s.plane() + i];
  const long double cnt = static_cast<long double>(s.n * s.plane());
  const long double mu = sum / cnt;
  long double sq = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const long double d = x.vec()[(n * s.c + c) * s.plane() + i] - mu;
      sq += d * d;
    }
  mean = static_cast<double>(mu);
  var = static_cast<double>(sq / cnt);
}

inline esbnn::RealTensor random_signs(esbnn::Shape s, std::mt19937_64& rng) {
  esbnn::RealTensor t(s);
  std::bernoulli_distribution coin(0.5);
  for (float& v : t.data()) v = coin(rng) ? 1.0f : -1.0f;
  return t;
}

inline esbnn::RealTensor random_normal(esbnn::Shape s, std::mt19937_64& rng, float scale = 1.0f) {
  esbnn::RealTensor t(s);
  std::normal_distribution<float> d(0.0f, scale);
  for (float& v : t.data()) v = d(rng);
  return t;
}

}  // namespace oracle
