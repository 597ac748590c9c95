#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "retri/error.hpp"
#include "retri/index.hpp"
#include "retri/tensor.hpp"

namespace retri {

/// Weighting of reciprocal-neighbor encodings. Unit weights turn the encoded
/// Jaccard distance into the plain set Jaccard distance (used by tests).
enum class ReciprocalEncoding { Gaussian, Unit };

struct KReciprocalSpec {
  std::size_t k1 = 20;
  std::size_t k2 = 6;
  double lambda = 0.3;
  ReciprocalEncoding encoding = ReciprocalEncoding::Gaussian;
};

struct EnhanceRerankSpec {
  std::optional<std::size_t> dba_k;
  std::optional<std::size_t> qe_k;
  std::optional<KReciprocalSpec> kr;
};

/// Database-side augmentation: each row becomes the l2-normalized sum of its k
/// nearest gallery rows weighted (k - r) / k by rank r, itself at rank 0.
inline MatrixF dba(const MatrixF& gallery, std::size_t k, Metric metric) {
  if (k < 1 || k > gallery.rows()) {
    fail(ErrorCode::KTooLarge, "DBA k=" + std::to_string(k) + " must be in [1, " + std::to_string(gallery.rows()) + "]");
  }
  std::vector<std::int64_t> ids(gallery.rows());
  std::iota(ids.begin(), ids.end(), 0);
  const GalleryIndex index(gallery, ids, metric);
  MatrixF out(gallery.rows(), gallery.cols());
  std::vector<double> acc(gallery.cols());
  for (std::size_t r = 0; r < gallery.rows(); ++r) {
    const QueryRanking ranked = index.rank_one(gallery.row(r));
    std::vector<std::size_t> neighbors{r};
    for (std::size_t i = 0; neighbors.size() < k; ++i) {
      if (ranked.order[i] != r) neighbors.push_back(ranked.order[i]);
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t rank = 0; rank < k; ++rank) {
      const double w = static_cast<double>(k - rank) / static_cast<double>(k);
      const auto row = gallery.row(neighbors[rank]);
      for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += w * row[d];
    }
    l2_normalize_inplace(std::span<double>(acc));
    std::copy(acc.begin(), acc.end(), out.row(r).begin());
  }
  return out;
}

/// l2-normalized mean of the query and its top-k ranked gallery vectors.
inline std::vector<float> query_expand(std::span<const float> query, const QueryRanking& ranking,
                                       const MatrixF& gallery, std::size_t k) {
  if (k < 1 || k > gallery.rows() || k > ranking.order.size()) {
    fail(ErrorCode::KTooLarge, "QE k=" + std::to_string(k) + " must be in [1, " + std::to_string(gallery.rows()) + "]");
  }
  if (query.size() != gallery.cols()) fail(ErrorCode::DimMismatch, "query and gallery dimensions differ");
  std::vector<double> acc(query.begin(), query.end());
  for (std::size_t r = 0; r < k; ++r) {
    const auto row = gallery.row(ranking.order[r]);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += row[d];
  }
  for (double& x : acc) x /= static_cast<double>(k + 1);
  l2_normalize_inplace(std::span<double>(acc));
  return std::vector<float>(acc.begin(), acc.end());
}

/// Expanded queries for every row of a ranking.
inline MatrixF query_expand_all(const MatrixF& queries, const RankingResult& ranking, const MatrixF& gallery,
                                std::size_t k) {
  MatrixF out(queries.rows(), queries.cols());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto e = query_expand(queries.row(q), ranking.queries[q], gallery, k);
    std::copy(e.begin(), e.end(), out.row(q).begin());
  }
  return out;
}

/// Sparse non-negative vector, sorted by index.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

namespace reciprocal {

/// Euclidean distances over the union: gallery rows first, then query rows.
inline Matrix<double> union_distances(const MatrixF& gallery, const MatrixF& queries) {
  const std::size_t n = gallery.rows(), m = n + queries.rows();
  auto point = [&](std::size_t i) { return i < n ? gallery.row(i) : queries.row(i - n); };
  Matrix<double> d(m, m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) d(i, j) = d(j, i) = std::sqrt(squared_distance(point(i), point(j)));
  }
  return d;
}

/// Every point's neighbors in ascending distance, ties by index.
inline std::vector<std::vector<std::size_t>> neighbor_lists(const Matrix<double>& d) {
  std::vector<std::vector<std::size_t>> out(d.rows());
  for (std::size_t p = 0; p < d.rows(); ++p) {
    auto& order = out[p];
    order.resize(d.rows());
    std::iota(order.begin(), order.end(), 0);
    const auto row = d.row(p);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); });
  }
  return out;
}

/// Members of the first k + 1 entries (self included) that also hold p in
/// their own first k + 1. Sorted ascending.
inline std::vector<std::size_t> reciprocal_set(const std::vector<std::vector<std::size_t>>& nn, std::size_t p,
                                               std::size_t k) {
  const std::size_t width = std::min(k + 1, nn[p].size());
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < width; ++r) {
    const std::size_t g = nn[p][r];
    const auto& back = nn[g];
    if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(width), p) !=
        back.begin() + static_cast<std::ptrdiff_t>(width)) {
      out.push_back(g);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// R(p, k1) grown by each member's R(c, round(k1/2)) when more than 2/3 of it
/// already lies in R(p, k1).
inline std::vector<std::size_t> expanded_set(const std::vector<std::vector<std::size_t>>& nn, std::size_t p,
                                             std::size_t k1) {
  const auto base = reciprocal_set(nn, p, k1);
  const std::size_t half = std::max<std::size_t>(1, (k1 + 1) / 2);
  std::vector<std::size_t> out = base;
  for (std::size_t c : base) {
    const auto candidate = reciprocal_set(nn, c, half);
    std::vector<std::size_t> common;
    std::set_intersection(candidate.begin(), candidate.end(), base.begin(), base.end(), std::back_inserter(common));
    if (3 * common.size() > 2 * candidate.size()) out.insert(out.end(), candidate.begin(), candidate.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Encoding vectors for every union point, after local expansion over k2 neighbors.
inline std::vector<SparseVector> encodings(const Matrix<double>& d, const std::vector<std::vector<std::size_t>>& nn,
                                           const KReciprocalSpec& spec) {
  const std::size_t m = d.rows();
  std::vector<SparseVector> v(m);
  for (std::size_t p = 0; p < m; ++p) {
    const auto members = expanded_set(nn, p, spec.k1);
    double total = 0.0;
    for (std::size_t g : members) {
      const double w = spec.encoding == ReciprocalEncoding::Unit ? 1.0 : std::exp(-d(p, g));
      v[p].emplace_back(g, w);
      total += w;
    }
    if (spec.encoding == ReciprocalEncoding::Gaussian && total > 0.0) {
      for (auto& entry : v[p]) entry.second /= total;
    }
  }
  if (spec.k2 <= 1) return v;

  std::vector<SparseVector> expanded(m);
  std::vector<double> dense(m);
  for (std::size_t p = 0; p < m; ++p) {
    std::fill(dense.begin(), dense.end(), 0.0);
    const std::size_t width = std::min(spec.k2, m);
    for (std::size_t r = 0; r < width; ++r) {
      for (const auto& [g, w] : v[nn[p][r]]) dense[g] += w;
    }
    for (std::size_t g = 0; g < m; ++g) {
      if (dense[g] != 0.0) expanded[p].emplace_back(g, dense[g] / static_cast<double>(width));
    }
  }
  return expanded;
}

/// 1 - sum(min) / sum(max) over the union of supports; 1 when both are empty.
inline double jaccard_distance(const SparseVector& a, const SparseVector& b) {
  double lo = 0.0, hi = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      hi += a[i++].second;
    } else if (i == a.size() || b[j].first < a[i].first) {
      hi += b[j++].second;
    } else {
      lo += std::min(a[i].second, b[j].second);
      hi += std::max(a[i].second, b[j].second);
      ++i;
      ++j;
    }
  }
  return hi > 0.0 ? 1.0 - lo / hi : 1.0;
}

}  // namespace reciprocal

inline void validate_kr(const KReciprocalSpec& spec, std::size_t union_size) {
  if (spec.k1 < 1 || spec.k2 < 1 || spec.k2 > spec.k1 || spec.k1 >= union_size) {
    fail(ErrorCode::InvalidK, "k-reciprocal needs 1 <= k2 <= k1 < N + Q (k1=" + std::to_string(spec.k1) +
                                  ", k2=" + std::to_string(spec.k2) + ", N+Q=" + std::to_string(union_size) + ")");
  }
  if (!(spec.lambda >= 0.0 && spec.lambda <= 1.0)) fail(ErrorCode::InvalidK, "k-reciprocal lambda must lie in [0, 1]");
}

/// Jaccard distances [Q, N] between query and gallery encodings.
inline Matrix<double> k_reciprocal_jaccard(const MatrixF& queries, const MatrixF& gallery, const KReciprocalSpec& spec) {
  const std::size_t n = gallery.rows();
  validate_kr(spec, n + queries.rows());
  const auto d = reciprocal::union_distances(gallery, queries);
  const auto nn = reciprocal::neighbor_lists(d);
  const auto v = reciprocal::encodings(d, nn, spec);
  Matrix<double> out(queries.rows(), n);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    for (std::size_t g = 0; g < n; ++g) out(q, g) = reciprocal::jaccard_distance(v[n + q], v[g]);
  }
  return out;
}

/// Re-rank with lambda * base distance + (1 - lambda) * Jaccard distance.
/// The base order is stably re-sorted, so equal final distances keep their base order.
inline RankingResult k_reciprocal_rerank(const MatrixF& queries, const MatrixF& gallery, const RankingResult& base,
                                         const KReciprocalSpec& spec) {
  if (queries.rows() != base.queries.size() || gallery.rows() != base.gallery_ids.size()) {
    fail(ErrorCode::ShapeMismatch, "base ranking does not match the query/gallery sets");
  }
  if (queries.cols() != gallery.cols()) fail(ErrorCode::DimMismatch, "query and gallery dimensions differ");
  const auto jaccard = k_reciprocal_jaccard(queries, gallery, spec);
  RankingResult out{base.query_ids, base.gallery_ids, {}};
  std::vector<double> final_dist(gallery.rows());
  for (std::size_t q = 0; q < base.queries.size(); ++q) {
    const auto& b = base.queries[q];
    for (std::size_t r = 0; r < b.order.size(); ++r) {
      const std::size_t g = b.order[r];
      final_dist[g] = spec.lambda * b.distances[r] + (1.0 - spec.lambda) * jaccard(q, g);
    }
    QueryRanking qr;
    qr.order = b.order;
    std::stable_sort(qr.order.begin(), qr.order.end(),
                     [&](std::uint32_t a, std::uint32_t c) { return final_dist[a] < final_dist[c]; });
    for (auto g : qr.order) qr.distances.push_back(final_dist[g]);
    out.queries.push_back(std::move(qr));
  }
  return out;
}

}  // namespace retri
