#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "retri/error.hpp"
#include "retri/featurepack.hpp"
#include "retri/tensor.hpp"

namespace retri {

/// Aggregation methods and their hyper-parameters.
namespace agg {
struct GAP {};
struct GMP {};
struct GeM {
  double p = 3.0;
};
struct SPoC {
  double sigma_frac = 1.0 / 3.0;
};
struct CroW {
  double a = 2.0;
  double b = 2.0;
  double eps = 1e-8;
};
struct SCDA {};
struct RMAC {
  std::size_t levels = 3;
  double overlap = 0.4;
};
struct PWA {
  std::size_t n_parts = 25;
  double alpha = 2.0;
};
}  // namespace agg

using AggregatorSpec = std::variant<agg::GAP, agg::GMP, agg::GeM, agg::SPoC, agg::CroW, agg::SCDA, agg::RMAC, agg::PWA>;

inline std::string method_name(const AggregatorSpec& spec) {
  static constexpr const char* names[] = {"GAP", "GMP", "GeM", "SPoC", "CroW", "SCDA", "RMAC", "PWA"};
  return names[spec.index()];
}

inline void validate_aggregator_spec(const AggregatorSpec& spec) {
  if (const auto* g = std::get_if<agg::GeM>(&spec); g && !(g->p >= 1.0)) {
    fail(ErrorCode::InvalidSpec, "GeM p must be >= 1");
  }
  if (const auto* s = std::get_if<agg::SPoC>(&spec); s && !(s->sigma_frac > 0.0)) {
    fail(ErrorCode::InvalidSpec, "SPoC sigma_frac must be > 0");
  }
  if (const auto* c = std::get_if<agg::CroW>(&spec); c && !(c->a > 0.0 && c->b > 0.0 && c->eps > 0.0)) {
    fail(ErrorCode::InvalidSpec, "CroW a, b and eps must be > 0");
  }
  if (const auto* r = std::get_if<agg::RMAC>(&spec); r && (r->levels < 1 || !(r->overlap >= 0.0 && r->overlap < 1.0))) {
    fail(ErrorCode::InvalidSpec, "RMAC needs levels >= 1 and 0 <= overlap < 1");
  }
  if (const auto* w = std::get_if<agg::PWA>(&spec); w && (w->n_parts < 1 || !(w->alpha > 0.0))) {
    fail(ErrorCode::InvalidSpec, "PWA needs n_parts >= 1 and alpha > 0");
  }
}

struct FittedAggregator {
  AggregatorSpec spec;
  std::size_t channels = 0;
  std::optional<std::vector<std::size_t>> part_channels;  // PWA only

  std::size_t output_dim() const {
    if (std::holds_alternative<agg::SCDA>(spec)) return 2 * channels;
    if (part_channels) return part_channels->size() * channels;
    return channels;
  }
};

/// Variance (divisor n-1) of each channel's clamped spatial sum across rows.
inline std::vector<double> channel_sum_variance(const FeaturePack& maps) {
  const std::size_t n = maps.rows(), c_count = maps.shape.at(1);
  std::vector<double> mean(c_count, 0.0), m2(c_count, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const MapView m = maps.map(r);
    for (std::size_t c = 0; c < c_count; ++c) {
      double s = 0.0;
      for (float x : m.channel(c)) s += std::max(x, 0.0f);
      // Welford update
      const double delta = s - mean[c];
      mean[c] += delta / static_cast<double>(r + 1);
      m2[c] += delta * (s - mean[c]);
    }
  }
  for (auto& v : m2) v /= static_cast<double>(n - 1);
  return m2;
}

/// PWA selects its part channels from the gallery; every other method is stateless.
inline FittedAggregator fit_aggregator(const AggregatorSpec& spec, const FeaturePack& gallery_maps) {
  validate_aggregator_spec(spec);
  if (gallery_maps.kind != PackKind::Maps) fail(ErrorCode::ShapeMismatch, "aggregation needs a maps pack");
  FittedAggregator fitted{spec, gallery_maps.shape.at(1), std::nullopt};
  if (const auto* pwa = std::get_if<agg::PWA>(&spec)) {
    if (gallery_maps.rows() < 2) fail(ErrorCode::NotEnoughSamples, "PWA part selection needs at least 2 maps");
    if (pwa->n_parts > fitted.channels) {
      fail(ErrorCode::NPartsExceedsChannels, "PWA n_parts=" + std::to_string(pwa->n_parts) + " exceeds " +
                                                 std::to_string(fitted.channels) + " channels");
    }
    const auto variance = channel_sum_variance(gallery_maps);
    std::vector<std::size_t> order(fitted.channels);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return variance[a] > variance[b]; });
    order.resize(pwa->n_parts);
    fitted.part_channels = std::move(order);
  }
  return fitted;
}

/// Square R-MAC regions as (top, left, side).
struct Region {
  std::size_t top, left, side;
  bool operator==(const Region&) const = default;
};

namespace detail {

/// Offsets of n windows of `side` over `length`, both extremes included and
/// consecutive windows overlapping by about `overlap` of the side.
inline std::vector<std::size_t> window_offsets(std::size_t length, std::size_t side, double overlap) {
  if (side >= length) return {0};
  const double span = static_cast<double>(length - side);
  const double max_step = static_cast<double>(side) * (1.0 - overlap);
  const auto n = static_cast<std::size_t>(std::ceil(span / max_step - 1e-12)) + 1;
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back((length - side) * k / (n - 1));
  }
  return out;
}

}  // namespace detail

/// Region grid for an H x W map: at level l the side is floor(2 min(H,W) / (l+1)).
inline std::vector<Region> rmac_regions(std::size_t height, std::size_t width, std::size_t levels, double overlap) {
  std::vector<Region> regions;
  const std::size_t shorter = std::min(height, width);
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::size_t side = std::max<std::size_t>(1, 2 * shorter / (l + 1));
    for (std::size_t top : detail::window_offsets(height, side, overlap)) {
      for (std::size_t left : detail::window_offsets(width, side, overlap)) regions.push_back({top, left, side});
    }
  }
  return regions;
}

namespace detail {

inline std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

inline std::vector<float> gap(const MapView& m) {
  std::vector<double> out(m.channels, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    for (float x : m.channel(c)) out[c] += x;
    out[c] /= static_cast<double>(m.area());
  }
  return to_float(out);
}

inline std::vector<float> gmp(const MapView& m) {
  std::vector<float> out(m.channels);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    out[c] = *std::max_element(ch.begin(), ch.end());
  }
  return out;
}

inline std::vector<float> gem(const MapView& m, double p) {
  std::vector<double> out(m.channels, 0.0);
  const auto area = static_cast<double>(m.area());
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    if (p == 1.0) {
      for (float x : ch) out[c] += std::max(x, 0.0f);
      out[c] /= area;
      continue;
    }
    // (mean x^p)^(1/p) evaluated relative to the channel max to keep x^p in range
    double peak = 0.0;
    for (float x : ch) peak = std::max(peak, static_cast<double>(x));
    if (peak <= 0.0) continue;
    double acc = 0.0;
    for (float x : ch) acc += std::pow(std::max(static_cast<double>(x), 0.0) / peak, p);
    out[c] = peak * std::pow(acc / area, 1.0 / p);
  }
  return to_float(out);
}

inline std::vector<double> spoc_weights(std::size_t height, std::size_t width, double sigma_frac) {
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double sigma = sigma_frac * static_cast<double>(std::min(height, width));
  std::vector<double> w(height * width);
  double total = 0.0;
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
      w[i * width + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      total += w[i * width + j];
    }
  }
  for (auto& x : w) x /= total;
  return w;
}

inline std::vector<float> spoc(const MapView& m, double sigma_frac) {
  const auto w = spoc_weights(m.height, m.width, sigma_frac);
  std::vector<double> out(m.channels, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    for (std::size_t k = 0; k < ch.size(); ++k) out[c] += w[k] * ch[k];
  }
  return to_float(out);
}

inline std::vector<float> crow(const MapView& m, const agg::CroW& params) {
  const std::size_t area = m.area();
  std::vector<double> spatial(area, 0.0);
  std::vector<double> occupancy(m.channels, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    std::size_t positive = 0;
    for (std::size_t k = 0; k < area; ++k) {
      const double x = std::max(ch[k], 0.0f);
      spatial[k] += x;
      positive += x > 0.0 ? 1 : 0;
    }
    occupancy[c] = static_cast<double>(positive) / static_cast<double>(area);
  }
  double norm = 0.0;
  for (double s : spatial) norm += std::pow(s, params.a);
  norm = std::pow(norm, 1.0 / params.a);
  for (double& s : spatial) s = norm > 0.0 ? std::pow(s / norm, 1.0 / params.b) : 0.0;

  const double occupancy_total = std::accumulate(occupancy.begin(), occupancy.end(), 0.0);
  std::vector<double> out(m.channels, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    double pooled = 0.0;
    for (std::size_t k = 0; k < area; ++k) pooled += spatial[k] * std::max(ch[k], 0.0f);
    const double weight = std::log((occupancy_total + params.eps) / (occupancy[c] + params.eps));
    out[c] = weight * pooled;
  }
  return to_float(out);
}

/// Locations whose channel-summed activation exceeds the mean; all locations if none do.
inline std::vector<bool> scda_mask(const MapView& m) {
  const std::size_t area = m.area();
  std::vector<double> act(area, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    for (std::size_t k = 0; k < area; ++k) act[k] += std::max(ch[k], 0.0f);
  }
  const double mean = std::accumulate(act.begin(), act.end(), 0.0) / static_cast<double>(area);
  std::vector<bool> mask(area);
  bool any = false;
  for (std::size_t k = 0; k < area; ++k) any |= (mask[k] = act[k] > mean);
  if (!any) mask.assign(area, true);
  return mask;
}

inline std::vector<float> scda(const MapView& m) {
  const auto mask = scda_mask(m);
  const auto kept = static_cast<double>(std::count(mask.begin(), mask.end(), true));
  std::vector<double> out(2 * m.channels, 0.0);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto ch = m.channel(c);
    double sum = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < ch.size(); ++k) {
      if (!mask[k]) continue;
      const double x = std::max(ch[k], 0.0f);
      sum += x;
      peak = std::max(peak, x);
    }
    out[c] = sum / kept;
    out[m.channels + c] = peak;
  }
  return to_float(out);
}

inline std::vector<float> rmac(const MapView& m, const agg::RMAC& params) {
  std::vector<double> out(m.channels, 0.0);
  std::vector<double> region_vec(m.channels);
  for (const Region& r : rmac_regions(m.height, m.width, params.levels, params.overlap)) {
    for (std::size_t c = 0; c < m.channels; ++c) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t i = r.top; i < r.top + r.side; ++i) {
        for (std::size_t j = r.left; j < r.left + r.side; ++j) peak = std::max(peak, static_cast<double>(m.at(c, i, j)));
      }
      region_vec[c] = peak;
    }
    l2_normalize_inplace(std::span<double>(region_vec));
    for (std::size_t c = 0; c < m.channels; ++c) out[c] += region_vec[c];
  }
  return to_float(out);
}

inline std::vector<float> pwa(const MapView& m, const std::vector<std::size_t>& parts, double alpha) {
  const std::size_t area = m.area();
  std::vector<double> out;
  out.reserve(parts.size() * m.channels);
  std::vector<double> weight(area);
  for (std::size_t part : parts) {
    const auto detector = m.channel(part);
    double total = 0.0;
    for (std::size_t k = 0; k < area; ++k) total += weight[k] = std::pow(std::max(detector[k], 0.0f), alpha);
    for (auto& w : weight) w = total > 0.0 ? w / total : 1.0 / static_cast<double>(area);
    for (std::size_t c = 0; c < m.channels; ++c) {
      const auto ch = m.channel(c);
      double acc = 0.0;
      for (std::size_t k = 0; k < area; ++k) acc += weight[k] * ch[k];
      out.push_back(acc);
    }
  }
  return to_float(out);
}

}  // namespace detail

/// Global descriptor for one [C, H, W] map. No normalization is applied.
inline std::vector<float> aggregate_map(const MapView& map, const FittedAggregator& agg) {
  if (map.channels != agg.channels) {
    fail(ErrorCode::ChannelMismatch, "map has " + std::to_string(map.channels) + " channels, aggregator was fit on " +
                                         std::to_string(agg.channels));
  }
  return std::visit(
      [&](const auto& s) -> std::vector<float> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, agg::GAP>) return detail::gap(map);
        else if constexpr (std::is_same_v<T, agg::GMP>) return detail::gmp(map);
        else if constexpr (std::is_same_v<T, agg::GeM>) return detail::gem(map, s.p);
        else if constexpr (std::is_same_v<T, agg::SPoC>) return detail::spoc(map, s.sigma_frac);
        else if constexpr (std::is_same_v<T, agg::CroW>) return detail::crow(map, s);
        else if constexpr (std::is_same_v<T, agg::SCDA>) return detail::scda(map);
        else if constexpr (std::is_same_v<T, agg::RMAC>) return detail::rmac(map, s);
        else return detail::pwa(map, agg.part_channels.value(), s.alpha);
      },
      agg.spec);
}

/// Mean over views (rows of `per_view`).
inline std::vector<float> fuse_views(const MatrixF& per_view) {
  if (per_view.rows() == 0) fail(ErrorCode::ShapeMismatch, "fuse_views needs at least one view");
  if (per_view.rows() == 1) return {per_view.row(0).begin(), per_view.row(0).end()};
  std::vector<double> acc(per_view.cols(), 0.0);
  for (std::size_t v = 0; v < per_view.rows(); ++v) {
    const auto r = per_view.row(v);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += r[d];
  }
  std::vector<float> out(acc.size());
  for (std::size_t d = 0; d < acc.size(); ++d) out[d] = static_cast<float>(acc[d] / static_cast<double>(per_view.rows()));
  return out;
}

/// Aggregate every view of every image, then fuse views per image.
inline FeaturePack aggregate_pack(const FeaturePack& maps, const FittedAggregator& agg) {
  if (maps.kind != PackKind::Maps) fail(ErrorCode::ShapeMismatch, "aggregate_pack needs a maps pack");
  const std::size_t views = maps.views;
  if (views == 0 || maps.rows() % views != 0) {
    fail(ErrorCode::ShapeMismatch, "row count " + std::to_string(maps.rows()) + " not divisible by view count");
  }
  const std::size_t images = maps.rows() / views;
  const std::size_t dim = agg.output_dim();
  MatrixF out(images, dim);
  MatrixF per_view(views, dim);
  for (std::size_t i = 0; i < images; ++i) {
    for (std::size_t v = 0; v < views; ++v) {
      const auto d = aggregate_map(maps.map(i * views + v), agg);
      std::copy(d.begin(), d.end(), per_view.row(v).begin());
    }
    const auto fused = fuse_views(per_view);
    std::copy(fused.begin(), fused.end(), out.row(i).begin());
  }
  return make_vectors_pack(maps.ids, maps.layer_tag, out);
}

}  // namespace retri
