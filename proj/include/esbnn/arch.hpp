#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "esbnn/es_block.hpp"

namespace esbnn {

/// Real-valued first convolution. Its output is tiled so the first binary
/// layer sees its expanded input, then normalized, then (optionally) max-pooled.
struct StemSpec {
  std::size_t out_c = 16;
  std::size_t k = 3;
  std::size_t stride = 1;
  bool maxpool = false;  // 3x3, stride 2, padding 1

  bool operator==(const StemSpec&) const = default;
};

/// Channels fed to the final fully-connected layer, relative to the last
/// binary layer's base width n and scaling factor tau.
enum class FcPolicy {
  Expand,  // n * tau * g: every replicated channel
  Match,   // n: the first n channels
  Shrink,  // n / tau: only the directly generated channels
};

struct TauGroup {
  std::size_t tau = 1;
  std::size_t groups = 1;
  bool operator==(const TauGroup&) const = default;
};

/// How a block's shortcut reaches the block's output shape.
enum class ShortcutPlan { Identity, Tile, ZeroPad, Downsample };

struct ArchSpec {
  std::string name;
  std::size_t in_c = 3;
  std::size_t in_h = 32;
  std::size_t in_w = 32;
  std::size_t classes = 10;
  StemSpec stem;
  std::vector<ESBlockSpec> layers;  // binarized layers, in order
  std::vector<TauGroup> schedule;   // one entry per binarized layer
  ShortcutMode shortcut = ShortcutMode::ZeroPad;
  FcPolicy fc_policy = FcPolicy::Expand;

  std::size_t stem_replication() const { return layers.empty() ? 1 : layers.front().ctau * layers.front().cgrp; }
  std::size_t stem_channels() const { return stem.out_c * stem_replication(); }
  std::size_t fc_in_features() const;
  ShortcutPlan shortcut_plan(std::size_t layer) const;
};

enum class DiagnosticKind {
  SpecLengthMismatch,
  InvalidSpec,
  ScheduleMismatch,
  ChainBreak,
  ShortcutMismatch,
  InvalidArch,
};

struct Diagnostic {
  DiagnosticKind kind;
  long layer;  // 1-based binarized layer index, 0 for the stem, -1 for arch-wide
  std::string message;
};

std::string_view to_string(DiagnosticKind kind);
std::string to_string(const Diagnostic& d);

/// Structural checks; never throws. Empty result means the arch is usable.
std::vector<Diagnostic> validate(const ArchSpec& arch);

/// Throws InvalidArch carrying the first diagnostic if validate() is not empty.
void require_valid(const ArchSpec& arch);

/// Writes ctau/cgrp from the schedule and ntau/ngrp from the following layer
/// (the last layer takes its own factors, shared with the FC input).
void apply_schedule(ArchSpec& arch);

/// Copy of `arch` with the same (tau, g) on every binarized layer.
ArchSpec with_uniform_schedule(ArchSpec arch, std::size_t tau, std::size_t groups);

/// Names: resnet18_es, resnet18_base, resnet20_es, resnet20_base, resnet20_thin.
ArchSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// Preset name or path to an architecture file.
ArchSpec load_arch(const std::string& preset_or_path);

/// Line-oriented `[arch]` / `[layer N]` key=value text.
std::string to_text(const ArchSpec& arch);
ArchSpec arch_from_text(std::string_view text);

/// 64-bit FNV-1a over the canonical text without the name line.
std::uint64_t fingerprint(const ArchSpec& arch);

std::string_view to_string(FcPolicy p);
std::string_view to_string(ShortcutMode m);

}  // namespace esbnn
