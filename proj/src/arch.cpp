#include "esbnn/arch.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "esbnn/error.hpp"

namespace esbnn {

std::size_t ArchSpec::fc_in_features() const {
  if (layers.empty()) return stem_channels();
  const ESBlockSpec& last = layers.back();
  switch (fc_policy) {
    case FcPolicy::Expand: return last.out_channels();
    case FcPolicy::Match: return last.ochn;
    case FcPolicy::Shrink: return last.ctau ? last.ochn / last.ctau : 0;
  }
  return 0;
}

ShortcutPlan ArchSpec::shortcut_plan(std::size_t layer) const {
  const ESBlockSpec& b = layers.at(layer);
  const std::size_t in = b.in_channels();
  const std::size_t out = b.out_channels();
  if (b.stride == 1 && in == out) return ShortcutPlan::Identity;
  if (b.stride == 1 && b.ichn == b.ochn && in != 0 && out > in && out % in == 0) return ShortcutPlan::Tile;
  if (shortcut == ShortcutMode::RealDownsampleES) return ShortcutPlan::Downsample;
  return ShortcutPlan::ZeroPad;
}

std::string_view to_string(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::SpecLengthMismatch: return "SpecLengthMismatch";
    case DiagnosticKind::InvalidSpec: return "InvalidSpec";
    case DiagnosticKind::ScheduleMismatch: return "ScheduleMismatch";
    case DiagnosticKind::ChainBreak: return "ChainBreak";
    case DiagnosticKind::ShortcutMismatch: return "ShortcutMismatch";
    case DiagnosticKind::InvalidArch: return "InvalidArch";
  }
  return "Unknown";
}

std::string to_string(const Diagnostic& d) {
  std::string where = d.layer < 0 ? "arch" : d.layer == 0 ? "stem" : "layer " + std::to_string(d.layer);
  return std::string(to_string(d.kind)) + " at " + where + ": " + d.message;
}

std::string_view to_string(FcPolicy p) {
  switch (p) {
    case FcPolicy::Expand: return "expand";
    case FcPolicy::Match: return "match";
    case FcPolicy::Shrink: return "shrink";
  }
  return "expand";
}

std::string_view to_string(ShortcutMode m) {
  return m == ShortcutMode::ZeroPad ? "zero_pad" : "real_downsample_es";
}

std::vector<Diagnostic> validate(const ArchSpec& arch) {
  std::vector<Diagnostic> out;
  auto add = [&](DiagnosticKind k, long layer, std::string msg) { out.push_back({k, layer, std::move(msg)}); };

  if (arch.in_c == 0 || arch.in_h == 0 || arch.in_w == 0) add(DiagnosticKind::InvalidArch, -1, "empty input shape");
  if (arch.classes == 0) add(DiagnosticKind::InvalidArch, -1, "no classes");
  if (arch.stem.out_c == 0 || arch.stem.k % 2 == 0 || arch.stem.stride == 0) {
    add(DiagnosticKind::InvalidArch, 0, "stem needs positive width, odd kernel and positive stride");
  }
  if (arch.schedule.size() != arch.layers.size()) {
    add(DiagnosticKind::SpecLengthMismatch, -1,
        "schedule has " + std::to_string(arch.schedule.size()) + " entries for " +
            std::to_string(arch.layers.size()) + " binarized layers");
  }
  if (!out.empty()) return out;

  const std::size_t n = arch.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const ESBlockSpec& b = arch.layers[i];
    const long id = static_cast<long>(i + 1);
    try {
      b.validate();
    } catch (const Error& e) {
      add(DiagnosticKind::InvalidSpec, id, e.what());
      continue;
    }
    const TauGroup& cur = arch.schedule[i];
    const TauGroup& next = i + 1 < n ? arch.schedule[i + 1] : arch.schedule[i];
    if (b.ctau != cur.tau || b.cgrp != cur.groups) {
      add(DiagnosticKind::ScheduleMismatch, id, "layer factors differ from schedule entry");
    }
    if (b.ntau != next.tau || b.ngrp != next.groups) {
      add(DiagnosticKind::ScheduleMismatch, id, "next-layer factors differ from the following schedule entry");
    }
    if (i + 1 < n) {
      const ESBlockSpec& nb = arch.layers[i + 1];
      if (b.ochn != nb.ichn || b.out_channels() != nb.in_channels()) {
        add(DiagnosticKind::ChainBreak, id + 1,
            "layer " + std::to_string(id) + " emits " + std::to_string(b.out_channels()) + " channels, layer " +
                std::to_string(id + 1) + " expects " + std::to_string(nb.in_channels()));
      }
    }
    const std::size_t in = b.in_channels();
    const std::size_t outc = b.out_channels();
    switch (arch.shortcut_plan(i)) {
      case ShortcutPlan::ZeroPad:
        if (outc < in) {
          add(DiagnosticKind::ShortcutMismatch, id,
              "zero-pad shortcut cannot shrink " + std::to_string(in) + " to " + std::to_string(outc) + " channels");
        }
        break;
      default: break;
    }
  }
  if (arch.stem.out_c != arch.layers.front().ichn) {
    add(DiagnosticKind::ChainBreak, 1,
        "stem emits " + std::to_string(arch.stem.out_c) + " base channels, layer 1 expects " +
            std::to_string(arch.layers.front().ichn));
  }
  if (arch.fc_in_features() == 0) add(DiagnosticKind::InvalidArch, -1, "fully-connected layer has no inputs");

  // Same-padded convs and ceil-mode subsampling keep every extent >= 1 after the stem.
  if (arch.in_h + 2 * (arch.stem.k / 2) < arch.stem.k || arch.in_w + 2 * (arch.stem.k / 2) < arch.stem.k) {
    add(DiagnosticKind::InvalidArch, 0, "input smaller than stem kernel");
  }
  return out;
}

void require_valid(const ArchSpec& arch) {
  const auto diags = validate(arch);
  if (!diags.empty()) throw Error(ErrorCode::InvalidArch, to_string(diags.front()));
}

void apply_schedule(ArchSpec& arch) {
  if (arch.schedule.size() != arch.layers.size()) {
    throw Error(ErrorCode::InvalidArch, "SpecLengthMismatch: schedule and layer counts differ");
  }
  const std::size_t n = arch.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const TauGroup& cur = arch.schedule[i];
    const TauGroup& next = i + 1 < n ? arch.schedule[i + 1] : cur;
    arch.layers[i].ctau = cur.tau;
    arch.layers[i].cgrp = cur.groups;
    arch.layers[i].ntau = next.tau;
    arch.layers[i].ngrp = next.groups;
  }
}

ArchSpec with_uniform_schedule(ArchSpec arch, std::size_t tau, std::size_t groups) {
  arch.schedule.assign(arch.layers.size(), TauGroup{tau, groups});
  apply_schedule(arch);
  return arch;
}

namespace {

std::vector<ESBlockSpec> resnet_layers(const std::vector<std::size_t>& widths, std::size_t per_stage,
                                       std::size_t first_width) {
  std::vector<ESBlockSpec> layers;
  std::size_t prev = first_width;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (std::size_t j = 0; j < per_stage; ++j) {
      ESBlockSpec b;
      b.ichn = prev;
      b.ochn = widths[s];
      b.k = 3;
      b.stride = (s > 0 && j == 0) ? 2 : 1;
      layers.push_back(b);
      prev = widths[s];
    }
  }
  return layers;
}

ArchSpec resnet18(std::string name, const std::vector<TauGroup>& schedule) {
  ArchSpec a;
  a.name = std::move(name);
  a.in_c = 3;
  a.in_h = a.in_w = 224;
  a.classes = 1000;
  a.stem = {64, 7, 2, true};
  a.layers = resnet_layers({64, 128, 256, 512}, 4, 64);
  a.schedule = schedule.empty() ? std::vector<TauGroup>(a.layers.size()) : schedule;
  a.shortcut = ShortcutMode::RealDownsampleES;
  a.fc_policy = FcPolicy::Expand;
  apply_schedule(a);
  return a;
}

ArchSpec resnet20(std::string name, std::size_t width_divisor, TauGroup factors) {
  ArchSpec a;
  a.name = std::move(name);
  a.in_c = 3;
  a.in_h = a.in_w = 32;
  a.classes = 10;
  const std::size_t base = 16 / width_divisor;
  a.stem = {base, 3, 1, false};
  a.layers = resnet_layers({base, 2 * base, 4 * base}, 6, base);
  a.schedule.assign(a.layers.size(), factors);
  a.shortcut = ShortcutMode::ZeroPad;
  a.fc_policy = FcPolicy::Expand;
  apply_schedule(a);
  return a;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"resnet18_es", "resnet18_base", "resnet20_es", "resnet20_base", "resnet20_thin"};
}

ArchSpec preset(std::string_view name) {
  if (name == "resnet18_es") {
    const std::size_t tau[] = {2, 2, 2, 2, 4, 4, 2, 2, 4, 4, 4, 4, 4, 4, 4, 4};
    const std::size_t grp[] = {1, 1, 2, 2, 1, 1, 2, 2, 1, 1, 1, 1, 1, 1, 2, 2};
    std::vector<TauGroup> sched;
    for (std::size_t i = 0; i < 16; ++i) sched.push_back({tau[i], grp[i]});
    return resnet18("resnet18_es", sched);
  }
  if (name == "resnet18_base") return resnet18("resnet18_base", {});
  if (name == "resnet20_es") return resnet20("resnet20_es", 1, {4, 1});
  if (name == "resnet20_base") return resnet20("resnet20_base", 1, {1, 1});
  if (name == "resnet20_thin") return resnet20("resnet20_thin", 4, {2, 1});
  throw Error(ErrorCode::UnknownPreset, std::string(name));
}

ArchSpec load_arch(const std::string& preset_or_path) {
  for (const auto& n : preset_names()) {
    if (n == preset_or_path) return preset(n);
  }
  std::ifstream in(preset_or_path);
  if (!in) throw Error(ErrorCode::MissingFile, "no preset or readable file named '" + preset_or_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return arch_from_text(ss.str());
}

std::string to_text(const ArchSpec& a) {
  std::ostringstream os;
  os << "# esbnn architecture v1\n[arch]\n";
  os << "name = " << a.name << "\n";
  os << "input = " << a.in_c << "x" << a.in_h << "x" << a.in_w << "\n";
  os << "classes = " << a.classes << "\n";
  os << "stem_out = " << a.stem.out_c << "\n";
  os << "stem_k = " << a.stem.k << "\n";
  os << "stem_stride = " << a.stem.stride << "\n";
  os << "stem_maxpool = " << (a.stem.maxpool ? 1 : 0) << "\n";
  os << "shortcut = " << to_string(a.shortcut) << "\n";
  os << "fc_policy = " << to_string(a.fc_policy) << "\n";
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const ESBlockSpec& b = a.layers[i];
    os << "\n[layer " << i + 1 << "]\n";
    os << "ichn = " << b.ichn << "\nochn = " << b.ochn << "\nk = " << b.k << "\nstride = " << b.stride
       << "\nctau = " << b.ctau << "\nntau = " << b.ntau << "\ncgrp = " << b.cgrp << "\nngrp = " << b.ngrp << "\n";
  }
  return os.str();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::size_t parse_size(std::string_view v, std::size_t line) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line) + ": expected integer, got '" +
                                            std::string(v) + "'");
  }
  return out;
}

}  // namespace

ArchSpec arch_from_text(std::string_view text) {
  ArchSpec a;
  a.name.clear();
  std::map<std::size_t, ESBlockSpec> layers;
  long section = -1;  // -1 none, 0 arch, N layer
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": bad header");
      const std::string_view inner = trim(line.substr(1, line.size() - 2));
      if (inner == "arch") {
        section = 0;
      } else if (inner.starts_with("layer")) {
        const std::size_t idx = parse_size(trim(inner.substr(5)), line_no);
        if (idx == 0 || layers.count(idx)) {
          throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": bad or duplicate layer index");
        }
        section = static_cast<long>(idx);
        layers[idx] = ESBlockSpec{};
      } else {
        throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || section < 0) {
      throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": expected key = value in a section");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view val = trim(line.substr(eq + 1));
    if (section == 0) {
      if (key == "name") {
        a.name = std::string(val);
      } else if (key == "input") {
        const auto x1 = val.find('x');
        const auto x2 = val.find('x', x1 + 1);
        if (x1 == std::string_view::npos || x2 == std::string_view::npos) {
          throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": input must be CxHxW");
        }
        a.in_c = parse_size(val.substr(0, x1), line_no);
        a.in_h = parse_size(val.substr(x1 + 1, x2 - x1 - 1), line_no);
        a.in_w = parse_size(val.substr(x2 + 1), line_no);
      } else if (key == "classes") {
        a.classes = parse_size(val, line_no);
      } else if (key == "stem_out") {
        a.stem.out_c = parse_size(val, line_no);
      } else if (key == "stem_k") {
        a.stem.k = parse_size(val, line_no);
      } else if (key == "stem_stride") {
        a.stem.stride = parse_size(val, line_no);
      } else if (key == "stem_maxpool") {
        a.stem.maxpool = parse_size(val, line_no) != 0;
      } else if (key == "shortcut") {
        if (val == "zero_pad") a.shortcut = ShortcutMode::ZeroPad;
        else if (val == "real_downsample_es") a.shortcut = ShortcutMode::RealDownsampleES;
        else throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": unknown shortcut mode");
      } else if (key == "fc_policy") {
        if (val == "expand") a.fc_policy = FcPolicy::Expand;
        else if (val == "match") a.fc_policy = FcPolicy::Match;
        else if (val == "shrink") a.fc_policy = FcPolicy::Shrink;
        else throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": unknown fc_policy");
      } else {
        throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": unknown key '" +
                                                std::string(key) + "'");
      }
      continue;
    }
    ESBlockSpec& b = layers[static_cast<std::size_t>(section)];
    const std::size_t v = parse_size(val, line_no);
    if (key == "ichn") b.ichn = v;
    else if (key == "ochn") b.ochn = v;
    else if (key == "k") b.k = v;
    else if (key == "stride") b.stride = v;
    else if (key == "ctau") b.ctau = v;
    else if (key == "ntau") b.ntau = v;
    else if (key == "cgrp") b.cgrp = v;
    else if (key == "ngrp") b.ngrp = v;
    else throw Error(ErrorCode::InvalidArch, "line " + std::to_string(line_no) + ": unknown key '" +
                                                 std::string(key) + "'");
  }
  std::size_t expect = 1;
  for (const auto& [idx, b] : layers) {
    if (idx != expect++) throw Error(ErrorCode::InvalidArch, "layer indices must be 1..N without gaps");
    a.layers.push_back(b);
    a.schedule.push_back({b.ctau, b.cgrp});
  }
  return a;
}

std::uint64_t fingerprint(const ArchSpec& arch) {
  ArchSpec anon = arch;
  anon.name.clear();
  const std::string text = to_text(anon);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace esbnn
