#include <random>

#include "doctest.h"
#include "esbnn/error.hpp"
#include "esbnn/model.hpp"
#include "oracles.hpp"

using namespace esbnn;

TEST_CASE("parameter naming and order") {
  const Model m(preset("resnet18_es"), 1);
  const auto p = m.parameters();
  CHECK(p.front().name == "stem.weight");
  CHECK(p[1].name == "stem.bn.gamma");
  CHECK(p[5].name == "layer1.weight");
  CHECK(p.back().name == "fc.bias");
  bool has_ds = false;
  for (const auto& v : p) has_ds |= v.name == "layer5.downsample.weight";
  CHECK(has_ds);
  for (const auto& v : p)
    if (v.kind == ParamKind::BinaryLatent)
      for (float w : v.data) REQUIRE(std::abs(w) <= 1.0f);
}

TEST_CASE("inference shapes and probes") {
  const Model m(preset("resnet20_es"), 2);
  std::mt19937_64 rng(1);
  const RealTensor x = oracle::random_normal({2, 3, 32, 32}, rng);
  std::size_t pre = 0, post = 0, res = 0, feats = 0;
  Probe probe;
  probe.on_block = [&](std::size_t layer, Stage s, const RealTensor& t) {
    if (layer == 0) return;
    CHECK(t.shape().c == m.arch().layers[layer - 1].out_channels());
    pre += s == Stage::PreBN;
    post += s == Stage::PostBN;
    res += s == Stage::PostResidual;
  };
  probe.on_features = [&](const RealTensor& f) { feats = f.shape().c; };
  const RealTensor logits = m.infer(x, &probe);
  CHECK(logits.shape() == Shape{2, 10, 1, 1});
  CHECK(pre == 18);
  CHECK(post == 18);
  CHECK(res == 18);
  CHECK(feats == m.arch().fc_in_features());
  CHECK(m.infer(x) == logits);
  CHECK_THROWS_AS(m.infer(RealTensor({1, 1, 32, 32})), Error);
}

TEST_CASE("maxpool and argmax") {
  RealTensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x.vec()[i] = static_cast<float>(i);
  const RealTensor y = maxpool3x3s2(x);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.vec() == std::vector<float>{5, 7, 13, 15});
  RealTensor l({1, 3, 1, 1});
  l.vec() = {2.0f, 2.0f, 1.0f};
  CHECK(argmax_rows(l) == std::vector<int>{0});
}

TEST_CASE("invalid architecture is rejected at construction") {
  ArchSpec a = preset("resnet20_es");
  a.layers[3].ichn = 5;
  CHECK_THROWS_AS(Model(a, 1), Error);
}
