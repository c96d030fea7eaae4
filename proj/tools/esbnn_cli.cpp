// esbnn: analyze, train, eval, diagnose and export-features for ES binary networks.
//
// Exit codes: 0 success, 2 usage or data error, 3 numeric failure.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "esbnn/analyzer.hpp"
#include "esbnn/checkpoint.hpp"
#include "esbnn/dataio.hpp"
#include "esbnn/error.hpp"
#include "esbnn/train.hpp"

namespace fs = std::filesystem;
using namespace esbnn;

namespace {

constexpr int kUsageError = 2;
constexpr int kNumericError = 3;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  void report(const char* what) const {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "# " << what << " took " << std::fixed << std::setprecision(3) << s << " s\n";
  }
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::IoError, "cannot create directory " + dir.string());
}

std::pair<std::size_t, std::size_t> parse_hw(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto w = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1 || h == 0 || w == 0) throw std::invalid_argument(s);
    return {h, w};
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidArgument, "--input-hw expects <H>x<W>, got '" + s + "'");
  }
}

/// Shared architecture flags: preset or file, optional uniform (tau, g) override, FC policy.
struct ArchFlags {
  std::string arch = "resnet20_thin";
  std::optional<std::size_t> tau;
  std::optional<std::size_t> groups;
  std::string fc_policy;

  void add(CLI::App* cmd) {
    cmd->add_option("--arch", arch, "preset name or architecture file")->capture_default_str();
    cmd->add_option("--tau", tau, "uniform scaling factor override");
    cmd->add_option("--groups", groups, "uniform group count override");
    cmd->add_option("--fc-policy", fc_policy, "expand | match | shrink")
        ->check(CLI::IsMember({"expand", "match", "shrink"}));
  }

  ArchSpec resolve() const {
    ArchSpec a = load_arch(arch);
    if (tau || groups) {
      std::size_t t = tau.value_or(a.schedule.empty() ? 1 : a.schedule.front().tau);
      std::size_t g = groups.value_or(a.schedule.empty() ? 1 : a.schedule.front().groups);
      a = with_uniform_schedule(a, t, g);
    }
    if (fc_policy == "expand") a.fc_policy = FcPolicy::Expand;
    if (fc_policy == "match") a.fc_policy = FcPolicy::Match;
    if (fc_policy == "shrink") a.fc_policy = FcPolicy::Shrink;
    require_valid(a);
    return a;
  }
};

/// `--data synthetic` or a CIFAR-10 directory.
struct DataFlags {
  std::string data = "synthetic";
  double subset = 1.0;
  std::size_t synthetic_n = 600;
  std::uint64_t data_seed = 0;

  void add(CLI::App* cmd, bool with_subset) {
    cmd->add_option("--data", data, "CIFAR-10 binary directory or 'synthetic'")->capture_default_str();
    if (with_subset) {
      cmd->add_option("--subset", subset, "stratified training fraction in (0, 1]")->capture_default_str();
    }
    cmd->add_option("--synthetic-n", synthetic_n, "synthetic training samples")->capture_default_str();
    cmd->add_option("--data-seed", data_seed, "seed of the synthetic data")->capture_default_str();
  }
  bool synthetic() const { return data == "synthetic"; }

  Dataset train_split(const ArchSpec& a, std::uint64_t seed) const {
    if (synthetic()) return esbnn::subset(synthetic_blobs(a.classes, synthetic_n, data_seed, image(a)), subset, seed);
    return esbnn::subset(cifar().train, subset, seed);
  }
  Dataset test_split(const ArchSpec& a) const {
    if (synthetic()) return synthetic_blobs(a.classes, std::max<std::size_t>(synthetic_n / 5, 1), data_seed + 1, image(a));
    return cifar().test;
  }

 private:
  static Shape image(const ArchSpec& a) { return {1, a.in_c, a.in_h, a.in_w}; }
  const Cifar10& cifar() const {
    if (!cache_) cache_ = load_cifar10(data);
    return *cache_;
  }
  mutable std::optional<Cifar10> cache_;
};

Dataset limit(Dataset d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return d.select(idx);
}

void print_report(const ArchSpec& a, std::size_t h, std::size_t w, const ComplexityReport& r) {
  auto row = [](const char* name, double v, const char* unit) {
    std::cout << std::left << std::setw(12) << name << std::right << std::setw(8) << std::fixed
              << std::setprecision(3) << v << "  " << unit << '\n';
  };
  std::cout << "arch " << a.name << "  input " << h << 'x' << w << '\n';
  row("Conv FLOPs", r.conv_flops / 1e8, "x1e8");
  row("FC FLOPs", r.fc_flops / 1e8, "x1e8");
  row("FLOPs", r.flops_total() / 1e8, "x1e8");
  row("BOPs", r.bops / 1e9, "x1e9");
  row("OPs", r.ops() / 1e8, "x1e8");
  row("BN FLOPs", r.bn_flops / 1e8, "x1e8");
  row("OPs+", r.ops_plus() / 1e8, "x1e8");
}

int cmd_analyze(const ArchFlags& af, const std::string& hw, const std::string& out) {
  const Timer t;
  const ArchSpec a = af.resolve();
  const auto [h, w] = hw.empty() ? std::pair{a.in_h, a.in_w} : parse_hw(hw);
  const ComplexityReport r = complexity_report(a, h, w);
  const CapacityProfile cap = capacity_profile(a);
  if (!out.empty()) {
    ensure_dir(out);
    auto c = open_out(fs::path(out) / "complexity.csv");
    write_complexity_csv(c, r);
    auto p = open_out(fs::path(out) / "capacity.csv");
    write_capacity_csv(p, cap);
  }
  print_report(a, h, w, r);
  t.report("analyze");
  return 0;
}

struct TrainFlags {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  float lr = 0.1f;
  float wd = 5e-4f;
  std::string ste = "clip";
  bool no_augment = false;
  std::size_t classes = 0;
  std::string out = "model.ckpt";
  std::string metrics;
};

int cmd_train(const ArchFlags& af, const DataFlags& df, const TrainFlags& tf, std::uint64_t seed) {
  const Timer t;
  ArchSpec a = af.resolve();
  if (tf.classes != 0) {
    if (!df.synthetic()) throw Error(ErrorCode::InvalidArgument, "--classes only applies to synthetic data");
    a.classes = tf.classes;
  }
  const fs::path ckpt(tf.out);
  const fs::path metrics_path = tf.metrics.empty() ? fs::path(tf.out + ".metrics.csv") : fs::path(tf.metrics);
  // Fail on unwritable outputs before spending time on training.
  open_out(ckpt);
  open_out(metrics_path);

  const Dataset tr = df.train_split(a, seed);
  const Dataset va = df.test_split(a);
  TrainConfig cfg;
  cfg.epochs = tf.epochs;
  cfg.batch_size = tf.batch;
  cfg.learning_rate = tf.lr;
  cfg.weight_decay = tf.wd;
  cfg.seed = seed;
  cfg.ste_mode = tf.ste == "polynomial" ? SteMode::Polynomial : SteMode::Clip;
  cfg.augment = !tf.no_augment && !df.synthetic();

  Model model(a, seed);
  std::cout << "train " << a.name << " on " << tr.size() << " samples, validate on " << va.size() << '\n';
  const auto metrics = train(model, tr, va, cfg, &std::cout);
  save_checkpoint(model, ckpt.string());
  auto m = open_out(metrics_path);
  write_metrics_csv(m, metrics);
  if (!metrics.empty()) {
    std::cout << "final val_acc " << std::fixed << std::setprecision(4) << metrics.back().val_acc << '\n';
  }
  t.report("train");
  return 0;
}

int cmd_eval(const std::string& ckpt, const DataFlags& df) {
  const Timer t;
  const Model model = load_checkpoint(ckpt);
  const Dataset d = df.test_split(model.arch());
  const EvalResult r = evaluate_detailed(model, d);
  std::cout << "top1 " << std::fixed << std::setprecision(4) << r.accuracy << "  loss " << r.loss << "  samples "
            << d.size() << '\n';
  t.report("eval");
  return 0;
}

int cmd_diagnose(const std::string& ckpt, const DataFlags& df, const std::string& out, const std::string& stage,
                 std::size_t samples) {
  const Timer t;
  ensure_dir(out);
  auto csv = open_out(fs::path(out) / "correlation.csv");
  const Model model = load_checkpoint(ckpt);
  const Dataset d = df.test_split(model.arch());
  const Stage st = stage == "pre-bn" ? Stage::PreBN : stage == "post-bn" ? Stage::PostBN : Stage::PostResidual;
  const auto layers = measure_replica_correlation(model, d, st, samples);
  write_correlation_csv(csv, layers);

  double lo = 1.0, hi = 0.0, sum = 0.0;
  std::size_t counted = 0;
  std::cout << "replica correlation (" << stage << "), " << std::min(samples, d.size()) << " samples\n";
  std::cout << "layer  coefficient  pairs\n";
  for (const auto& l : layers) {
    std::cout << std::setw(5) << l.layer << "  ";
    if (l.stats.pairs_used == 0) {
      std::cout << std::setw(11) << "n/a";
    } else {
      const double c = l.stats.coefficient();
      std::cout << std::setw(11) << std::fixed << std::setprecision(6) << c;
      lo = std::min(lo, c);
      hi = std::max(hi, c);
      sum += c;
      ++counted;
    }
    std::cout << "  " << l.stats.pairs_used << '\n';
  }
  if (counted > 0) {
    std::cout << "summary min " << lo << " mean " << sum / static_cast<double>(counted) << " max " << hi
              << "  layers below 1: ";
    std::size_t below = 0;
    for (const auto& l : layers) below += l.stats.pairs_used > 0 && l.stats.coefficient() < 1.0;
    std::cout << below << '/' << counted << '\n';
  } else {
    std::cout << "summary no replicated layers\n";
  }
  t.report("diagnose");
  return 0;
}

int cmd_export(const std::string& ckpt, const DataFlags& df, const std::string& layer, const std::string& out,
               std::size_t samples) {
  const Timer t;
  const Model model = load_checkpoint(ckpt);
  std::size_t l = pre_fc_layer(model);
  if (layer != "fc") {
    try {
      std::size_t used = 0;
      l = std::stoul(layer, &used);
      if (used != layer.size()) throw std::invalid_argument(layer);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidLayer, "--layer expects an index or 'fc', got '" + layer + "'");
    }
  }
  if (l > pre_fc_layer(model)) {
    throw Error(ErrorCode::InvalidLayer, "layer " + layer + " out of range 0.." + std::to_string(pre_fc_layer(model)));
  }
  auto f = open_out(out);
  const Dataset d = limit(df.test_split(model.arch()), samples);
  export_features(model, d, l, f);
  std::cout << "exported " << d.size() << " samples from layer " << l << " to " << out << '\n';
  t.report("export-features");
  return 0;
}

void apply_thread_cap() {
  if (const char* env = std::getenv("ESBNN_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw Error(ErrorCode::InvalidArgument, std::string("ESBNN_THREADS must be a positive integer, got '") + env + "'");
    }
    omp_set_num_threads(static_cast<int>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expanding-and-shrinking binary neural networks"};
  app.require_subcommand(1);
  app.allow_extras(false);

  std::uint64_t seed = 0;
  ArchFlags arch;
  DataFlags data;
  TrainFlags tf;
  std::string hw, out, ckpt, stage = "post-bn", layer = "fc";
  std::size_t samples = 256;

  auto* analyze = app.add_subcommand("analyze", "complexity ledger and capacity profile");
  arch.add(analyze);
  analyze->add_option("--input-hw", hw, "input size <H>x<W> (default: the arch's own)");
  analyze->add_option("--out", out, "directory for complexity.csv and capacity.csv");
  analyze->add_option("--seed", seed, "accepted for uniformity; analysis is deterministic");

  auto* trn = app.add_subcommand("train", "train and write a checkpoint plus metrics CSV");
  arch.add(trn);
  data.add(trn, true);
  trn->add_option("--epochs", tf.epochs)->capture_default_str();
  trn->add_option("--batch-size", tf.batch)->capture_default_str();
  trn->add_option("--lr", tf.lr)->capture_default_str();
  trn->add_option("--weight-decay", tf.wd)->capture_default_str();
  trn->add_option("--ste", tf.ste)->check(CLI::IsMember({"clip", "polynomial"}))->capture_default_str();
  trn->add_flag("--no-augment", tf.no_augment);
  trn->add_option("--classes", tf.classes, "class count for synthetic data");
  trn->add_option("--out", tf.out, "checkpoint path")->capture_default_str();
  trn->add_option("--metrics", tf.metrics, "metrics CSV path (default <out>.metrics.csv)");
  trn->add_option("--seed", seed)->capture_default_str();

  auto* evl = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  evl->add_option("--ckpt", ckpt)->required();
  data.add(evl, false);
  evl->add_option("--seed", seed);

  auto* diag = app.add_subcommand("diagnose", "replica correlation per binarized layer");
  diag->add_option("--ckpt", ckpt)->required();
  data.add(diag, false);
  diag->add_option("--out", out, "directory for correlation.csv")->required();
  diag->add_option("--stage", stage)->check(CLI::IsMember({"pre-bn", "post-bn", "post-residual"}))->capture_default_str();
  diag->add_option("--samples", samples)->capture_default_str();
  diag->add_option("--seed", seed);

  auto* exp = app.add_subcommand("export-features", "per-sample features as CSV");
  exp->add_option("--ckpt", ckpt)->required();
  data.add(exp, false);
  exp->add_option("--layer", layer, "0 = stem, 1..L blocks, fc = features entering the classifier")
      ->capture_default_str();
  exp->add_option("--out", out)->required();
  exp->add_option("--samples", samples, "0 = all")->capture_default_str();
  exp->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    apply_thread_cap();
    if (*analyze) return cmd_analyze(arch, hw, out);
    if (*trn) return cmd_train(arch, data, tf, seed);
    if (*evl) return cmd_eval(ckpt, data);
    if (*diag) return cmd_diagnose(ckpt, data, out, stage, samples);
    if (*exp) return cmd_export(ckpt, data, layer, out, samples);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::NonFiniteLoss ? kNumericError : kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
