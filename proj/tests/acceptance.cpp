// Acceptance runner: one verdict line per criterion.
//
//   esbnn_acceptance [--criteria 1,2,...] [--cifar-dir DIR] [--seeds N] [--epochs N]
//
// Exit status: 0 all selected criteria passed, 1 any failed, 77 every selected
// criterion was skipped (missing CIFAR-10 data).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "esbnn/analyzer.hpp"
#include "esbnn/checkpoint.hpp"
#include "esbnn/error.hpp"
#include "esbnn/train.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace esbnn;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Pass;
  std::string detail;
};

// Pinned tolerances.
constexpr double kLedgerTol = 0.02;       // criterion 1 (baseline) and criterion 2
constexpr double kScheduleTol = 0.05;     // criterion 1 (ES BN and OPs+)
constexpr double kLedgerSeconds = 1.0;
constexpr std::size_t kKernelGeometries = 1000;
constexpr double kKernelSeconds = 30.0;
constexpr double kEnumerationSeconds = 10.0;
constexpr std::size_t kRandomSpecs = 100;
constexpr std::size_t kGradientPoints = 100;  // per STE mode
constexpr std::size_t kGradientCoords = 8;
constexpr double kGradientTol = 1e-3;
constexpr double kSubsetFraction = 0.1;
constexpr double kCorrelationRounding = 1e-6;  // criterion 7

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

/// Compares at the precision the reference value was printed with, so a
/// printed 0.005 is matched by anything that rounds to 0.005.
struct Check {
  std::ostringstream log;
  bool ok = true;

  void printed(const std::string& name, double value, double unit, double reference, int decimals, double tol) {
    const double scale = std::pow(10.0, decimals);
    const double shown = std::round(value / unit * scale) / scale;
    const double rel = std::abs(shown - reference) / reference;
    const bool pass = rel <= tol;
    ok &= pass;
    log << "  " << (pass ? "ok  " : "BAD ") << std::left << std::setw(22) << name << std::right << std::fixed
        << std::setprecision(decimals + 3) << value / unit << " (shown " << std::setprecision(decimals) << shown
        << ", reference " << reference << ", tol " << std::setprecision(0) << tol * 100 << "%)\n";
  }
  void that(const std::string& name, bool cond, const std::string& info = {}) {
    ok &= cond;
    log << "  " << (cond ? "ok  " : "BAD ") << name << (info.empty() ? "" : ": " + info) << '\n';
  }
};

Outcome criterion_ledger() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const ComplexityReport base = complexity_report(preset("resnet18_base"), 224, 224);
  const ComplexityReport es = complexity_report(preset("resnet18_es"), 224, 224);
  const double elapsed = seconds_since(t0);
  c.printed("base conv FLOPs", base.conv_flops, 1e8, 1.373, 3, kLedgerTol);
  c.printed("base FC FLOPs", base.fc_flops, 1e8, 0.005, 3, kLedgerTol);
  c.printed("base BOPs", base.bops, 1e9, 1.676, 3, kLedgerTol);
  c.printed("base OPs", base.ops(), 1e8, 1.640, 3, kLedgerTol);
  c.printed("base BN FLOPs", base.bn_flops, 1e8, 0.025, 3, kLedgerTol);
  c.printed("base OPs+", base.ops_plus(), 1e8, 1.665, 3, kLedgerTol);
  c.printed("ES FC FLOPs", es.fc_flops, 1e8, 0.041, 3, kLedgerTol);
  c.printed("ES OPs", es.ops(), 1e8, 1.676, 3, kLedgerTol);
  c.printed("ES BN FLOPs", es.bn_flops, 1e8, 0.082, 3, kScheduleTol);
  c.printed("ES OPs+", es.ops_plus(), 1e8, 1.758, 3, kScheduleTol);
  c.that("runtime < 1 s", elapsed < kLedgerSeconds, std::to_string(elapsed) + " s");
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_table2() {
  Check c;
  const ComplexityReport base = complexity_report(preset("resnet18_base"), 224, 224);
  const ComplexityReport es = complexity_report(preset("resnet18_es"), 224, 224);
  c.printed("base BOPs", base.bops, 1e9, 1.68, 2, kLedgerTol);
  c.printed("base FLOPs", base.flops_total(), 1e8, 1.37, 2, kLedgerTol);
  c.printed("base OPs", base.ops(), 1e8, 1.64, 2, kLedgerTol);
  c.printed("ES FLOPs", es.flops_total(), 1e8, 1.41, 2, kLedgerTol);
  c.printed("ES OPs", es.ops(), 1e8, 1.68, 2, kLedgerTol);
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_kernels() {
  std::mt19937_64 rng(20240601);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t mismatches = 0;
  const std::size_t group_choices[] = {1, 2, 4};
  for (std::size_t i = 0; i < kKernelGeometries; ++i) {
    const std::size_t groups = group_choices[rng() % 3];
    const std::size_t c_in = groups * (1 + rng() % (32 / groups));
    const std::size_t c_out = groups * (1 + rng() % 4);
    const std::size_t k = rng() % 2 ? 3 : 1;
    const std::size_t stride = 1 + rng() % 2;
    const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8;
    const ConvGeometry g{c_in, c_out, k, stride, k / 2, groups};
    const RealTensor a = oracle::random_signs({1 + rng() % 2, c_in, h, w}, rng);
    const RealTensor wt = oracle::random_signs(g.weight_shape(), rng);
    const RealTensor ref = float_conv_oracle(a, wt, g);
    const RealTensor got = binary_conv2d(pack_signs(a, 1 + (rng() % 2) * (groups - 1)), pack_signs(wt), g);
    if (!(got == ref) || !(binary_conv2d_serial(pack_signs(a), pack_signs(wt), g) == ref)) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  Check c;
  c.that(std::to_string(kKernelGeometries) + " geometries exact", mismatches == 0,
         std::to_string(mismatches) + " mismatches");
  c.that("runtime < 30 s", elapsed < kKernelSeconds, std::to_string(elapsed) + " s");
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_capacity() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  for (std::size_t cin = 1; cin <= 3; ++cin) {
    const std::size_t n = oracle::enumerate_dot_values(cin).size();
    c.that("c_in=" + std::to_string(cin) + " k=1", layer_capacity(cin, 1) == n, std::to_string(n) + " values");
  }
  const std::size_t n = oracle::enumerate_dot_values(9).size();
  c.that("c_in=1 k=3", layer_capacity(1, 3) == n, std::to_string(n) + " values");
  const double elapsed = seconds_since(t0);
  c.that("runtime < 10 s", elapsed < kEnumerationSeconds, std::to_string(elapsed) + " s");
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_invariance() {
  std::mt19937_64 rng(77);
  const std::size_t taus[] = {1, 2, 4, 8};
  const std::size_t groups[] = {1, 2, 4};
  std::size_t made = 0, bad = 0;
  while (made < kRandomSpecs) {
    ESBlockSpec s;
    s.ichn = 4 * (1 + rng() % 8);
    s.ochn = 4 * (1 + rng() % 16);
    s.k = rng() % 2 ? 3 : 1;
    s.stride = 1 + rng() % 2;
    s.ctau = taus[rng() % 4];
    s.cgrp = groups[rng() % 3];
    s.ntau = taus[rng() % 4];
    s.ngrp = groups[rng() % 3];
    try {
      s.validate();
    } catch (const Error&) {
      continue;
    }
    ++made;
    const ESBlockSpec base{s.ichn, s.ochn, s.k, s.stride, 1, 1, 1, 1};
    const std::size_t hw = 3 + rng() % 6;
    const RealTensor x = oracle::random_normal({1, s.in_channels(), hw, hw}, rng);
    const RealTensor out = replicate_channels(es_conv(x, RealTensor(s.weight_shape(), 0.5f), s), s.replication());
    const std::size_t oh = out.shape().h, ow = out.shape().w;
    // Every directly generated output entry reduces over one group's full input depth.
    const std::uint64_t measured = static_cast<std::uint64_t>(s.conv_channels()) * oh * ow *
                                   s.geometry().in_per_group() * s.k * s.k;
    const bool ok = block_bops(s, oh, ow) == block_bops(base, oh, ow) && measured == block_bops(base, oh, ow) &&
                    block_binary_params(s) == block_binary_params(base) &&
                    out.shape().c == s.ochn * s.ntau * s.ngrp;
    bad += !ok;
  }
  Check c;
  c.that(std::to_string(kRandomSpecs) + " random specs: BOPs, params, output channels", bad == 0,
         std::to_string(bad) + " violations");
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_gradients() {
  std::mt19937_64 rng(4242);
  Check c;
  for (SteMode mode : {SteMode::Clip, SteMode::Polynomial}) {
    double worst = 0.0;
    std::size_t failures = 0, straddled = 0, used = 0;
    for (std::size_t p = 0; p < kGradientPoints; ++p) {
      // Two binarized 8-wide layers on 1x1 inputs.
      Model m(toy::mlp(8, 8, 2, 3), rng());
      toy::randomize(m, rng);
      const RealTensor x = oracle::random_normal({8, 8, 1, 1}, rng);
      std::vector<int> y(8);
      for (int& v : y) v = static_cast<int>(rng() % 3);
      const auto r = toy::finite_difference_check(m, x, y, mode, kGradientCoords, rng);
      worst = std::max(worst, r.rel_error);
      failures += !(r.rel_error < kGradientTol) || r.used == 0;
      straddled += r.straddled;
      used += r.used;
    }
    std::ostringstream info;
    info << std::scientific << std::setprecision(2) << "worst relative error " << worst << ", " << failures
         << " points over 1e-3, " << used << " coordinates compared, " << straddled
         << " skipped at a surrogate breakpoint";
    c.that(std::string(mode == SteMode::Clip ? "clip" : "polynomial") + " mode, " +
               std::to_string(kGradientPoints) + " points",
           failures == 0, info.str());
  }
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_serialization() {
  Check c;
  std::mt19937_64 rng(9);
  const fs::path p = fs::temp_directory_path() / "esbnn_acceptance.ckpt";
  for (const auto& name : preset_names()) {
    const Model m(preset(name), 17);
    save_checkpoint(m, p.string());
    const Model back = load_checkpoint(p.string(), m.arch());
    const ArchSpec& a = m.arch();
    Dataset d;
    d.classes = a.classes;
    d.images = oracle::random_normal({2, a.in_c, a.in_h, a.in_w}, rng);
    d.labels = {0, 1};
    const std::vector<std::size_t> idx{0, 1};
    const bool same_logits = m.infer(d.images) == back.infer(d.images);
    const EvalResult e1 = evaluate_detailed(m, d), e2 = evaluate_detailed(back, d);
    c.that(name, same_logits && e1.accuracy == e2.accuracy && e1.loss == e2.loss && e1.predictions == e2.predictions);
  }
  fs::remove(p);
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

struct CifarContext {
  std::string dir;
  std::size_t seeds = 3;
  std::size_t epochs = 20;
};

std::optional<Cifar10> load_or_skip(const CifarContext& ctx, Outcome& out) {
  if (ctx.dir.empty()) {
    out = {Verdict::Skip, "  CIFAR-10 not available: set ESBNN_CIFAR10_DIR or pass --cifar-dir\n"};
    return std::nullopt;
  }
  try {
    return load_cifar10(ctx.dir);
  } catch (const Error& e) {
    out = {Verdict::Skip, std::string("  CIFAR-10 not loadable: ") + e.what() + "\n"};
    return std::nullopt;
  }
}

Outcome criterion_diversification(const CifarContext& ctx) {
  Outcome out;
  auto data = load_or_skip(ctx, out);
  if (!data) return out;
  Check c;
  const Dataset train_set = subset(data->train, kSubsetFraction, 0);
  Model m(preset("resnet20_thin"), 0);
  for (const auto& l : measure_replica_correlation(m, data->test, Stage::PreBN)) {
    c.that("init pre-BN layer " + std::to_string(l.layer),
           l.stats.pairs_used > 0 && l.stats.coefficient() == 1.0,
           std::to_string(l.stats.coefficient()));
  }
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 0;
  train(m, train_set, Dataset{}, cfg);
  // Float rounding alone moves an exact 1 by ~1e-7; that is not diversification.
  for (const auto& l : measure_replica_correlation(m, data->test, Stage::PostBN)) {
    std::ostringstream v;
    v << std::setprecision(9) << l.stats.coefficient();
    c.that("trained post-BN layer " + std::to_string(l.layer),
           l.stats.pairs_used > 0 && l.stats.coefficient() < 1.0 - kCorrelationRounding, v.str());
  }
  // Not part of the verdict.
  for (const auto& l : measure_replica_correlation(m, data->test, Stage::PostResidual)) {
    c.log << "  info trained post-residual layer " << l.layer << ": " << std::setprecision(6)
          << l.stats.coefficient() << '\n';
  }
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

Outcome criterion_training(const CifarContext& ctx) {
  Outcome out;
  auto data = load_or_skip(ctx, out);
  if (!data) return out;
  Check c;
  const ArchSpec es = with_uniform_schedule(preset("resnet20_thin"), 2, 1);
  const ArchSpec base = with_uniform_schedule(preset("resnet20_thin"), 1, 1);
  double es_sum = 0.0, base_sum = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < ctx.seeds; ++s) {
    const Dataset tr = subset(data->train, kSubsetFraction, s);
    TrainConfig cfg;
    cfg.epochs = ctx.epochs;
    cfg.seed = s;
    Model me(es, s), mb(base, s);
    train(me, tr, Dataset{}, cfg);
    train(mb, tr, Dataset{}, cfg);
    const double ae = evaluate(me, data->test), ab = evaluate(mb, data->test);
    es_sum += ae;
    base_sum += ab;
    std::ostringstream v;
    v << std::fixed << std::setprecision(4) << "ES " << ae << " baseline " << ab;
    c.log << "  seed " << s << ": " << v.str() << '\n';
  }
  const double n = static_cast<double>(ctx.seeds);
  std::ostringstream v;
  v << std::fixed << std::setprecision(4) << es_sum / n << " vs " << base_sum / n << " over " << ctx.seeds
    << " seeds, " << ctx.epochs << " epochs, " << std::setprecision(0) << seconds_since(t0) << " s";
  c.that("mean top-1 ES(2,1) >= baseline", es_sum / n >= base_sum / n, v.str());
  return {c.ok ? Verdict::Pass : Verdict::Fail, c.log.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::vector<int> selected{1, 2, 3, 4, 5, 6, 7, 8, 9};
  CifarContext ctx;
  if (const char* env = std::getenv("ESBNN_CIFAR10_DIR")) ctx.dir = env;
  app.add_option("--criteria", selected, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--cifar-dir", ctx.dir, "CIFAR-10 binary directory (default $ESBNN_CIFAR10_DIR)");
  app.add_option("--seeds", ctx.seeds, "seeds for criterion 8")->check(CLI::PositiveNumber);
  app.add_option("--epochs", ctx.epochs, "epochs for criterion 8")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"complexity ledger (Table 6)", criterion_ledger}},
      {2, {"Table 2 cross-check", criterion_table2}},
      {3, {"binary kernel vs float oracle", criterion_kernels}},
      {4, {"capacity vs enumeration", criterion_capacity}},
      {5, {"ES invariance", criterion_invariance}},
      {6, {"STE gradients vs finite differences", criterion_gradients}},
      {7, {"replica diversification", [&] { return criterion_diversification(ctx); }}},
      {8, {"training improvement trend", [&] { return criterion_training(ctx); }}},
      {9, {"checkpoint round-trip", criterion_serialization}},
  };

  std::size_t passed = 0, failed = 0, skipped = 0;
  for (int id : std::set<int>(selected.begin(), selected.end())) {
    const auto& [name, run] = criteria.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("  exception: ") + e.what() + "\n"};
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    std::cout << o.detail << "[" << tag << "] criterion " << id << ": " << name << " (" << std::fixed
              << std::setprecision(2) << seconds_since(t0) << " s)\n"
              << std::flush;
    (o.verdict == Verdict::Pass ? passed : o.verdict == Verdict::Fail ? failed : skipped)++;
  }
  std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped\n";
  if (failed > 0) return 1;
  if (passed == 0 && skipped > 0) return 77;
  return 0;
}
