#include <random>

#include "doctest.h"
#include "esbnn/arch.hpp"
#include "esbnn/error.hpp"

using namespace esbnn;

namespace {

bool has(const std::vector<Diagnostic>& d, DiagnosticKind k, long layer = -2) {
  for (const auto& x : d)
    if (x.kind == k && (layer == -2 || x.layer == layer)) return true;
  return false;
}

}  // namespace

TEST_CASE("every preset validates") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    CHECK(validate(preset(name)).empty());
  }
  CHECK_THROWS_AS(preset("vgg"), Error);
}

TEST_CASE("resnet18_es schedule") {
  const ArchSpec a = preset("resnet18_es");
  REQUIRE(a.layers.size() == 16);
  CHECK(a.schedule[4] == TauGroup{4, 1});
  CHECK(a.layers[4].ctau == 4);
  CHECK(a.layers[2].cgrp == 2);
  CHECK(a.layers[15].cgrp == 2);
  // ntau/ngrp come from the following layer.
  CHECK(a.layers[3].ntau == 4);
  CHECK(a.layers[3].ngrp == 1);
  CHECK(a.stem_replication() == 2);
  for (const auto& l : preset("resnet18_base").layers) CHECK(l.replication() == 1);
}

TEST_CASE("resnet20 presets") {
  const ArchSpec es = preset("resnet20_es");
  REQUIRE(es.layers.size() == 18);
  for (const auto& t : es.schedule) CHECK(t == TauGroup{4, 1});
  CHECK(es.shortcut == ShortcutMode::ZeroPad);
  CHECK(validate(with_uniform_schedule(es, 4, 4)).empty());
  const auto bad = validate(with_uniform_schedule(es, 8, 4));
  CHECK(has(bad, DiagnosticKind::InvalidSpec, 1));
  const ArchSpec thin = preset("resnet20_thin");
  CHECK(thin.stem.out_c == 4);
  CHECK(thin.layers.back().ochn == 16);
}

TEST_CASE("validate reports structured diagnostics") {
  ArchSpec a = preset("resnet20_es");
  a.schedule.pop_back();
  CHECK(has(validate(a), DiagnosticKind::SpecLengthMismatch));

  ArchSpec b = preset("resnet20_base");
  b.layers[7].ichn = 64;  // layer 8 now expects 64 channels while layer 7 emits 32
  const auto d = validate(b);
  CHECK(has(d, DiagnosticKind::ChainBreak, 8));
  CHECK_THROWS_AS(require_valid(b), Error);
}

TEST_CASE("chaining holds for random valid schedules") {
  std::mt19937_64 rng(12);
  const std::size_t taus[] = {1, 2, 4};
  const std::size_t groups[] = {1, 2};
  int valid = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ArchSpec a = preset("resnet18_base");
    for (auto& t : a.schedule) t = {taus[rng() % 3], groups[rng() % 2]};
    apply_schedule(a);
    if (!validate(a).empty()) continue;
    ++valid;
    CHECK(a.stem_channels() == a.layers[0].in_channels());
    for (std::size_t i = 0; i + 1 < a.layers.size(); ++i)
      CHECK(a.layers[i].out_channels() == a.layers[i + 1].in_channels());
  }
  CHECK(valid > 50);
}

TEST_CASE("text round-trip and fingerprint") {
  for (const auto& name : preset_names()) {
    const ArchSpec a = preset(name);
    const ArchSpec b = arch_from_text(to_text(a));
    CHECK(to_text(b) == to_text(a));
    CHECK(fingerprint(a) == fingerprint(b));
  }
  CHECK(fingerprint(preset("resnet20_es")) != fingerprint(preset("resnet20_base")));
  ArchSpec renamed = preset("resnet20_es");
  renamed.name = "other";
  CHECK(fingerprint(renamed) == fingerprint(preset("resnet20_es")));
  CHECK_THROWS_AS(arch_from_text("[arch]\nname = x\nbogus = 1\n"), Error);
  CHECK_THROWS_AS(load_arch("/nonexistent/arch.txt"), Error);
}

TEST_CASE("ES and baseline ResNet-18 have the same binary weight count") {
  auto count = [](const ArchSpec& a) {
    std::size_t n = 0;
    for (const auto& l : a.layers) n += l.weight_shape().numel();
    return n;
  };
  CHECK(count(preset("resnet18_es")) == count(preset("resnet18_base")));
}

TEST_CASE("fc policy") {
  ArchSpec a = preset("resnet20_thin");
  const auto& last = a.layers.back();
  a.fc_policy = FcPolicy::Expand;
  CHECK(a.fc_in_features() == last.out_channels());
  a.fc_policy = FcPolicy::Match;
  CHECK(a.fc_in_features() == last.ochn);
  a.fc_policy = FcPolicy::Shrink;
  CHECK(a.fc_in_features() == last.ochn / last.ctau);
}
