#include <random>

#include "doctest.h"
#include "esbnn/error.hpp"
#include "esbnn/es_block.hpp"
#include "oracles.hpp"

using namespace esbnn;

TEST_CASE("channel bookkeeping") {
  const ESBlockSpec s{64, 64, 3, 1, 2, 2, 1, 1};
  CHECK(s.in_channels() == 128);
  CHECK(s.conv_channels() == 32);
  CHECK(s.replication() == 4);
  CHECK(s.out_channels() == 128);
  CHECK(s.reduction_per_group() == 128);
  // Uniform tau, g = 1: replication tau^2.
  const ESBlockSpec u{16, 16, 3, 1, 4, 4, 1, 1};
  CHECK(u.replication() == 16);
}

TEST_CASE("invalid specs") {
  CHECK_THROWS_AS((ESBlockSpec{16, 16, 3, 1, 8, 1, 4, 1}.validate()), Error);
  CHECK_THROWS_AS((ESBlockSpec{16, 16, 3, 1, 0, 1, 1, 1}.validate()), Error);
  CHECK_NOTHROW((ESBlockSpec{16, 16, 3, 1, 4, 4, 4, 4}.validate()));
}

TEST_CASE("es_conv output is the conv tiled by the replication factor") {
  std::mt19937_64 rng(4);
  const ESBlockSpec s{4, 8, 3, 2, 2, 2, 2, 1};
  const RealTensor x = oracle::random_normal({2, s.in_channels(), 6, 6}, rng);
  const RealTensor w = oracle::random_normal(s.weight_shape(), rng);
  const RealTensor conv = es_conv(x, w, s);
  CHECK(conv.shape() == Shape{2, 4, 3, 3});
  const RealTensor ref = float_conv_oracle(sign(x), sign(w), s.geometry());
  CHECK(conv == ref);
  const RealTensor rep = replicate_channels(conv, s.replication());
  CHECK(rep.shape().c == s.out_channels());
  for (std::size_t c = 0; c < rep.shape().c; ++c)
    for (std::size_t i = 0; i < 9; ++i) CHECK(rep.at(1, c, i / 3, i % 3) == conv.at(1, c % 4, i / 3, i % 3));
}

TEST_CASE("es_conv rejects wrong input width") {
  const ESBlockSpec s{4, 8, 3, 1, 2, 1, 1, 1};
  CHECK_THROWS_AS(es_conv(RealTensor({1, 4, 3, 3}, 1.0f), RealTensor(s.weight_shape(), 1.0f), s), Error);
}

TEST_CASE("training batchnorm uses batch statistics") {
  std::mt19937_64 rng(9);
  RealTensor x = oracle::random_normal({4, 3, 5, 5}, rng, 2.0f);
  for (float& v : x.data()) v += 1.5f;
  BNParams p(3);
  p.gamma = {1.0f, 2.0f, 0.5f};
  p.beta = {0.0f, -1.0f, 3.0f};
  BNCache cache;
  const RealTensor y = batchnorm(x, p, true, &cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean, var;
    oracle::channel_stats(x, c, mean, var);
    CHECK(cache.mean[c] == doctest::Approx(mean).epsilon(1e-6));
    double ym, yv;
    oracle::channel_stats(y, c, ym, yv);
    CHECK(ym == doctest::Approx(p.beta[c]).epsilon(1e-4));
    CHECK(yv == doctest::Approx(p.gamma[c] * p.gamma[c] * var / (var + p.eps)).epsilon(1e-4));
    const double n = 100.0;
    CHECK(p.running_mean[c] == doctest::Approx(0.1 * mean).epsilon(1e-5));
    CHECK(p.running_var[c] == doctest::Approx(0.9 + 0.1 * var * n / (n - 1)).epsilon(1e-5));
  }
}

TEST_CASE("eval batchnorm uses running statistics") {
  BNParams p(1);
  p.running_mean = {2.0f};
  p.running_var = {4.0f};
  p.eps = 0.0f;
  p.gamma = {3.0f};
  p.beta = {1.0f};
  const RealTensor y = batchnorm(RealTensor({1, 1, 1, 1}, 6.0f), p);
  CHECK(y.vec()[0] == doctest::Approx(7.0f));
}

TEST_CASE("residual_adapt") {
  std::mt19937_64 rng(2);
  const RealTensor x = oracle::random_normal({1, 4, 5, 5}, rng);
  CHECK(residual_adapt(x, 4, 1, ShortcutMode::ZeroPad) == x);
  const RealTensor z = residual_adapt(x, 8, 2, ShortcutMode::ZeroPad);
  CHECK(z.shape() == Shape{1, 8, 3, 3});
  CHECK(z.at(0, 1, 2, 1) == x.at(0, 1, 4, 2));
  CHECK(z.at(0, 6, 1, 1) == 0.0f);
  try {
    residual_adapt(x, 2, 1, ShortcutMode::ZeroPad);
    FAIL("expected TargetTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TargetTooSmall);
  }
  CHECK_THROWS_AS(residual_adapt(x, 8, 2, ShortcutMode::RealDownsampleES), Error);
}

TEST_CASE("real ES downsample is a strided grouped 1x1 conv, tiled and normalized") {
  std::mt19937_64 rng(8);
  const ESBlockSpec s{4, 8, 3, 2, 2, 2, 2, 2};
  DownsampleParams ds{oracle::random_normal(s.downsample_geometry().weight_shape(), rng), BNParams(s.out_channels())};
  const RealTensor x = oracle::random_normal({1, s.in_channels(), 6, 6}, rng);
  const RealTensor y = residual_adapt(x, s.out_channels(), 2, ShortcutMode::RealDownsampleES, &s, &ds);
  CHECK(y.shape() == Shape{1, s.out_channels(), 3, 3});
  const RealTensor conv = float_conv_oracle(x, ds.weights, s.downsample_geometry());
  const float scale = 1.0f / std::sqrt(1.0f + ds.bn.eps);
  CHECK(y.at(0, 5, 1, 2) == doctest::Approx(conv.at(0, 1, 1, 2) * scale).epsilon(1e-5));
}

TEST_CASE("block forward adds the shortcut after BN") {
  std::mt19937_64 rng(6);
  const ESBlockSpec s{4, 4, 3, 1, 2, 2, 1, 1};
  const RealTensor x = oracle::random_normal({1, 8, 4, 4}, rng);
  const RealTensor w = oracle::random_normal(s.weight_shape(), rng);
  BNParams bn(8);
  const RealTensor y = es_block_forward(x, w, bn, s, x);
  const RealTensor body = batchnorm(replicate_channels(es_conv(x, w, s), 4), bn);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.vec()[i] == body.vec()[i] + x.vec()[i]);
  CHECK_THROWS_AS(es_block_forward(x, w, bn, s, RealTensor({1, 4, 4, 4})), Error);
}
