#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "esbnn/arch.hpp"
#include "esbnn/dataio.hpp"
#include "esbnn/model.hpp"

namespace esbnn {

/// Distinct values one output entry of a binary conv can take: m + 1 with m = c_in_per_group * k^2.
std::size_t layer_capacity(std::size_t c_in_per_group, std::size_t k);

struct CapacityRecord {
  std::size_t layer = 0;  // 1-based
  std::size_t m_baseline = 0;
  std::size_t m_es = 0;
  std::size_t capacity_baseline = 0;
  std::size_t capacity_es = 0;
};

struct CapacityProfile {
  std::vector<CapacityRecord> layers;
};

/// Baseline column uses ichn * k^2; ES column uses ichn * ctau * k^2.
CapacityProfile capacity_profile(const ArchSpec& arch);
/// Header `layer,m,capacity_baseline,capacity_es`; m is the ES reduction length.
void write_capacity_csv(std::ostream& out, const CapacityProfile& profile);

/// Binary ops of one ES layer at output size (oh, ow): every output channel
/// reduces over its own group only.
std::uint64_t block_bops(const ESBlockSpec& spec, std::size_t oh, std::size_t ow);
/// Latent weights of one binarized layer.
std::uint64_t block_binary_params(const ESBlockSpec& spec);
std::uint64_t binary_param_count(const ArchSpec& arch);

struct ComplexityItem {
  std::string component;
  std::uint64_t flops = 0;
  std::uint64_t bops = 0;
};

/// Per-image counts; one multiply-add is one FLOP and a folded BN costs one FLOP per element.
struct ComplexityReport {
  std::uint64_t conv_flops = 0;
  std::uint64_t fc_flops = 0;
  std::uint64_t bn_flops = 0;
  std::uint64_t bops = 0;
  std::vector<ComplexityItem> items;

  std::uint64_t flops_total() const { return conv_flops + fc_flops; }
  /// flops_total + bops / 64, held in 1/64 units so the ledger stays exact.
  std::uint64_t ops_x64() const { return 64 * flops_total() + bops; }
  std::uint64_t ops_plus_x64() const { return ops_x64() + 64 * bn_flops; }
  double ops() const { return static_cast<double>(ops_x64()) / 64.0; }
  double ops_plus() const { return static_cast<double>(ops_plus_x64()) / 64.0; }
};

/// Pooling layers are not counted. Throws InvalidArch.
ComplexityReport complexity_report(const ArchSpec& arch, std::size_t h, std::size_t w);
/// Header `component,flops,bops`, one row per item then totals.
void write_complexity_csv(std::ostream& out, const ComplexityReport& report);

/// Replica pairing of one captured feature map: channel j < base is directly
/// generated and j + t * base (t = 1 .. r-1) are its copies.
struct CorrelationStats {
  double sum_abs = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_degenerate = 0;  // a constant channel; excluded

  double coefficient() const;  // NaN when no pair was usable
  void merge(const CorrelationStats& other);
};

/// Pearson correlation over the spatial positions of each sample, per pair.
CorrelationStats replica_correlation(const RealTensor& features, std::size_t base_channels, std::size_t replication);

/// Pearson correlation of two equally sized series; NaN if either is constant.
double pearson(std::span<const float> a, std::span<const float> b);

struct LayerCorrelation {
  std::size_t layer = 0;
  CorrelationStats stats;
};

/// Runs eval-mode inference over the first `max_samples` samples and measures
/// every binarized layer at `stage`. BN is a per-channel affine map, so PostBN
/// coefficients equal the PreBN ones up to rounding; replicas only decorrelate
/// once the shortcut is added (PostResidual).
std::vector<LayerCorrelation> measure_replica_correlation(const Model& model, const Dataset& data, Stage stage,
                                                          std::size_t max_samples = 256, std::size_t batch_size = 64);
/// Header `layer,coefficient,pairs_used`.
void write_correlation_csv(std::ostream& out, const std::vector<LayerCorrelation>& layers);

/// Layer selector for export_features: 0 is the stem, 1..L the binarized
/// blocks (global-average pooled), L + 1 the features entering the final FC.
std::size_t pre_fc_layer(const Model& model);

/// Header `id,label,f0,..`; values printed with enough digits to round-trip.
/// Throws InvalidLayer.
void export_features(const Model& model, const Dataset& data, std::size_t layer, std::ostream& out,
                     std::size_t batch_size = 64);

}  // namespace esbnn
