#include "esbnn/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "esbnn/error.hpp"

namespace esbnn {

std::size_t layer_capacity(std::size_t c_in_per_group, std::size_t k) {
  if (c_in_per_group == 0 || k == 0) throw Error(ErrorCode::InvalidArgument, "capacity needs positive arguments");
  return c_in_per_group * k * k + 1;
}

CapacityProfile capacity_profile(const ArchSpec& arch) {
  require_valid(arch);
  CapacityProfile p;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const ESBlockSpec& s = arch.layers[i];
    CapacityRecord r;
    r.layer = i + 1;
    r.m_baseline = s.ichn * s.k * s.k;
    r.m_es = s.reduction_per_group() * s.k * s.k;
    r.capacity_baseline = layer_capacity(s.ichn, s.k);
    r.capacity_es = layer_capacity(s.reduction_per_group(), s.k);
    p.layers.push_back(r);
  }
  return p;
}

void write_capacity_csv(std::ostream& out, const CapacityProfile& profile) {
  out << "layer,m,capacity_baseline,capacity_es\n";
  for (const auto& r : profile.layers)
    out << r.layer << ',' << r.m_es << ',' << r.capacity_baseline << ',' << r.capacity_es << '\n';
}

std::uint64_t block_bops(const ESBlockSpec& spec, std::size_t oh, std::size_t ow) {
  return static_cast<std::uint64_t>(spec.conv_channels()) * spec.reduction_per_group() * spec.k * spec.k * oh * ow;
}

std::uint64_t block_binary_params(const ESBlockSpec& spec) { return spec.weight_shape().numel(); }

std::uint64_t binary_param_count(const ArchSpec& arch) {
  std::uint64_t total = 0;
  for (const auto& s : arch.layers) total += block_binary_params(s);
  return total;
}

ComplexityReport complexity_report(const ArchSpec& arch, std::size_t h, std::size_t w) {
  require_valid(arch);
  const ConvGeometry sg{arch.in_c, arch.stem.out_c, arch.stem.k, arch.stem.stride, arch.stem.k / 2, 1};
  if (h + 2 * sg.padding < sg.k || w + 2 * sg.padding < sg.k) {
    throw Error(ErrorCode::InvalidArch, "input " + std::to_string(h) + "x" + std::to_string(w) + " too small");
  }
  ComplexityReport r;
  auto add = [&r](std::string name, std::uint64_t flops, std::uint64_t bops) {
    r.items.push_back({std::move(name), flops, bops});
  };

  std::size_t oh = sg.out_extent(h), ow = sg.out_extent(w);
  const std::uint64_t stem_flops = static_cast<std::uint64_t>(arch.stem.out_c) * arch.in_c * sg.k * sg.k * oh * ow;
  const std::uint64_t stem_bn = static_cast<std::uint64_t>(arch.stem_channels()) * oh * ow;
  r.conv_flops += stem_flops;
  r.bn_flops += stem_bn;
  add("stem.conv", stem_flops, 0);
  add("stem.bn", stem_bn, 0);
  if (arch.stem.maxpool) {
    oh = (oh - 1) / 2 + 1;
    ow = (ow - 1) / 2 + 1;
  }

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const ESBlockSpec& s = arch.layers[i];
    const ConvGeometry g = s.geometry();
    const std::size_t nh = g.out_extent(oh), nw = g.out_extent(ow);
    const std::string p = "layer" + std::to_string(i + 1);
    const std::uint64_t bops = block_bops(s, nh, nw);
    const std::uint64_t bn = static_cast<std::uint64_t>(s.out_channels()) * nh * nw;
    r.bops += bops;
    r.bn_flops += bn;
    add(p + ".conv", 0, bops);
    add(p + ".bn", bn, 0);
    if (arch.shortcut_plan(i) == ShortcutPlan::Downsample) {
      const ConvGeometry dg = s.downsample_geometry();
      const std::uint64_t ds = static_cast<std::uint64_t>(dg.c_out) * dg.in_per_group() * nh * nw;
      r.conv_flops += ds;
      r.bn_flops += bn;
      add(p + ".downsample.conv", ds, 0);
      add(p + ".downsample.bn", bn, 0);
    }
    oh = nh;
    ow = nw;
  }

  r.fc_flops = static_cast<std::uint64_t>(arch.classes) * arch.fc_in_features();
  add("fc", r.fc_flops, 0);
  return r;
}

void write_complexity_csv(std::ostream& out, const ComplexityReport& report) {
  out << "component,flops,bops\n";
  for (const auto& it : report.items) out << it.component << ',' << it.flops << ',' << it.bops << '\n';
  out << "total.conv," << report.conv_flops << ",0\n";
  out << "total.fc," << report.fc_flops << ",0\n";
  out << "total.bn," << report.bn_flops << ",0\n";
  out << "total.binary,0," << report.bops << '\n';
}

double CorrelationStats::coefficient() const {
  return pairs_used == 0 ? std::numeric_limits<double>::quiet_NaN() : sum_abs / static_cast<double>(pairs_used);
}

void CorrelationStats::merge(const CorrelationStats& other) {
  sum_abs += other.sum_abs;
  pairs_used += other.pairs_used;
  pairs_degenerate += other.pairs_degenerate;
}

double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  // Identical inputs give va == vb == cov, and sqrt(va * va) == va exactly.
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

CorrelationStats replica_correlation(const RealTensor& features, std::size_t base_channels, std::size_t replication) {
  const Shape& s = features.shape();
  if (base_channels == 0 || replication == 0 || base_channels * replication != s.c) {
    throw Error(ErrorCode::ChannelMismatch, to_string(s) + " is not " + std::to_string(replication) +
                                                " replicas of " + std::to_string(base_channels) + " channels");
  }
  CorrelationStats st;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t j = 0; j < base_channels; ++j) {
      const auto src = features.plane(n, j);
      for (std::size_t t = 1; t < replication; ++t) {
        const double r = pearson(src, features.plane(n, j + t * base_channels));
        if (std::isnan(r)) {
          ++st.pairs_degenerate;
        } else {
          st.sum_abs += std::abs(r);
          ++st.pairs_used;
        }
      }
    }
  }
  return st;
}

std::vector<LayerCorrelation> measure_replica_correlation(const Model& model, const Dataset& data, Stage stage,
                                                          std::size_t max_samples, std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
  const ArchSpec& arch = model.arch();
  std::vector<LayerCorrelation> out(arch.layers.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].layer = i + 1;

  Probe probe;
  probe.on_block = [&](std::size_t layer, Stage st, const RealTensor& t) {
    if (layer == 0 || st != stage) return;
    const ESBlockSpec& s = arch.layers[layer - 1];
    out[layer - 1].stats.merge(replica_correlation(t, s.conv_channels(), s.replication()));
  };
  const std::size_t total = std::min(max_samples, data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < total; start += batch_size) {
    idx.resize(std::min(total, start + batch_size) - start);
    std::iota(idx.begin(), idx.end(), start);
    model.infer(data.batch_images(idx), &probe);
  }
  return out;
}

void write_correlation_csv(std::ostream& out, const std::vector<LayerCorrelation>& layers) {
  out << "layer,coefficient,pairs_used\n";
  out << std::setprecision(17);
  for (const auto& l : layers) {
    out << l.layer << ',';
    if (l.stats.pairs_used == 0) {
      out << "nan";
    } else {
      out << l.stats.coefficient();
    }
    out << ',' << l.stats.pairs_used << '\n';
  }
}

std::size_t pre_fc_layer(const Model& model) { return model.arch().layers.size() + 1; }

void export_features(const Model& model, const Dataset& data, std::size_t layer, std::ostream& out,
                     std::size_t batch_size) {
  const std::size_t fc_layer = pre_fc_layer(model);
  if (layer > fc_layer) {
    throw Error(ErrorCode::InvalidLayer, "layer " + std::to_string(layer) + " out of range 0.." +
                                             std::to_string(fc_layer));
  }
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");

  std::vector<RealTensor> captured;
  Probe probe;
  if (layer == fc_layer) {
    probe.on_features = [&](const RealTensor& f) { captured.push_back(f); };
  } else {
    probe.on_block = [&](std::size_t l, Stage st, const RealTensor& t) {
      if (l == layer && st == Stage::PostResidual) captured.push_back(global_avgpool(t, t.shape().c));
    };
  }

  bool header = false;
  std::vector<std::size_t> idx;
  out << std::setprecision(9);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(data.size(), start + batch_size) - start);
    std::iota(idx.begin(), idx.end(), start);
    captured.clear();
    model.infer(data.batch_images(idx), &probe);
    const RealTensor& f = captured.at(0);
    const std::size_t dim = f.shape().c;
    if (!header) {
      out << "id,label";
      for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
      out << '\n';
      header = true;
    }
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out << idx[j] << ',' << data.labels[idx[j]];
      for (float v : f.sample(j)) out << ',' << v;
      out << '\n';
    }
  }
  if (!header) out << "id,label\n";
}

}  // namespace esbnn
