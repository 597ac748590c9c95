#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retri/error.hpp"
#include "retri/featurepack.hpp"
#include "retri/tensor.hpp"

namespace retri {

enum class Metric { Euclidean, Cosine };

inline std::string_view to_string(Metric m) { return m == Metric::Euclidean ? "euclidean" : "cosine"; }

/// Ordered gallery positions and distances (ascending) for one query.
struct QueryRanking {
  std::vector<std::uint32_t> order;
  std::vector<double> distances;
  bool operator==(const QueryRanking&) const = default;
};

/// Rankings of all queries. Positions index into `gallery_ids`.
struct RankingResult {
  std::vector<std::int64_t> query_ids;
  std::vector<std::int64_t> gallery_ids;
  std::vector<QueryRanking> queries;
  bool operator==(const RankingResult&) const = default;
};

/// Squared euclidean distance accumulated in double, left to right.
inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    acc += diff * diff;
  }
  return acc;
}

/// Exact brute-force index. Under the cosine metric both sides are
/// l2-normalized and compared by euclidean distance, which orders identically
/// to cosine similarity.
class GalleryIndex {
 public:
  GalleryIndex(MatrixF vectors, std::vector<std::int64_t> ids, Metric metric)
      : vectors_(std::move(vectors)), ids_(std::move(ids)), metric_(metric) {
    if (vectors_.rows() == 0) fail(ErrorCode::EmptyGallery, "cannot index an empty gallery");
    if (ids_.size() != vectors_.rows()) fail(ErrorCode::ShapeMismatch, "gallery ids and rows differ in count");
    require_finite(vectors_.data(), "gallery vectors");
    if (metric_ == Metric::Cosine) {
      for (std::size_t r = 0; r < vectors_.rows(); ++r) l2_normalize_inplace(vectors_.row(r));
    }
  }

  std::size_t size() const noexcept { return vectors_.rows(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  Metric metric() const noexcept { return metric_; }
  const std::vector<std::int64_t>& ids() const noexcept { return ids_; }
  const MatrixF& vectors() const noexcept { return vectors_; }

  QueryRanking rank_one(std::span<const float> query) const {
    if (query.size() != dim()) {
      fail(ErrorCode::DimMismatch, "query dimension " + std::to_string(query.size()) + " != gallery " +
                                       std::to_string(dim()));
    }
    std::vector<float> normalized;
    if (metric_ == Metric::Cosine) {
      normalized.assign(query.begin(), query.end());
      l2_normalize_inplace(std::span<float>(normalized));
      query = normalized;
    }
    const std::size_t n = size();
    std::vector<double> key(n);
    for (std::size_t g = 0; g < n; ++g) key[g] = squared_distance(query, vectors_.row(g));
    QueryRanking out;
    out.order.resize(n);
    std::iota(out.order.begin(), out.order.end(), 0u);
    std::sort(out.order.begin(), out.order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return key[a] < key[b] || (key[a] == key[b] && a < b);
    });
    out.distances.resize(n);
    for (std::size_t r = 0; r < n; ++r) out.distances[r] = std::sqrt(key[out.order[r]]);
    return out;
  }

  RankingResult rank(const MatrixF& queries, std::vector<std::int64_t> query_ids) const {
    if (query_ids.size() != queries.rows()) fail(ErrorCode::ShapeMismatch, "query ids and rows differ in count");
    if (queries.rows() > 0 && queries.cols() != dim()) {
      fail(ErrorCode::DimMismatch, "query dimension " + std::to_string(queries.cols()) + " != gallery " +
                                       std::to_string(dim()));
    }
    RankingResult result{std::move(query_ids), ids_, {}};
    result.queries.reserve(queries.rows());
    for (std::size_t q = 0; q < queries.rows(); ++q) result.queries.push_back(rank_one(queries.row(q)));
    return result;
  }

 private:
  MatrixF vectors_;
  std::vector<std::int64_t> ids_;
  Metric metric_;
};

inline GalleryIndex build_index(const FeaturePack& gallery, Metric metric) {
  if (gallery.kind != PackKind::Vectors) fail(ErrorCode::ShapeMismatch, "index needs a vectors pack");
  if (gallery.rows() == 0) fail(ErrorCode::EmptyGallery, "cannot index an empty gallery");
  return GalleryIndex(gallery.matrix(), gallery.ids, metric);
}

inline RankingResult rank(const FeaturePack& queries, const GalleryIndex& index) {
  return index.rank(queries.matrix(), queries.ids);
}

/// {"query_ids":..., "gallery_ids":..., "rankings":[{"query_id", "gallery_ids", "distances"}]}
/// where each ranking lists manifest ids in ascending distance.
inline nlohmann::ordered_json ranking_to_json(const RankingResult& r) {
  nlohmann::ordered_json out;
  out["query_ids"] = r.query_ids;
  out["gallery_ids"] = r.gallery_ids;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t q = 0; q < r.queries.size(); ++q) {
    nlohmann::ordered_json row;
    row["query_id"] = r.query_ids[q];
    std::vector<std::int64_t> ids;
    ids.reserve(r.queries[q].order.size());
    for (auto pos : r.queries[q].order) ids.push_back(r.gallery_ids[pos]);
    row["gallery_ids"] = std::move(ids);
    row["distances"] = r.queries[q].distances;
    rows.push_back(std::move(row));
  }
  out["rankings"] = std::move(rows);
  return out;
}

inline RankingResult ranking_from_json(const nlohmann::json& j) {
  RankingResult r;
  try {
    r.query_ids = j.at("query_ids").get<std::vector<std::int64_t>>();
    r.gallery_ids = j.at("gallery_ids").get<std::vector<std::int64_t>>();
    std::vector<std::size_t> perm(r.gallery_ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return r.gallery_ids[a] < r.gallery_ids[b]; });
    const auto& rows = j.at("rankings");
    if (rows.size() != r.query_ids.size()) fail(ErrorCode::FormatError, "rankings count != query_ids count");
    for (std::size_t q = 0; q < rows.size(); ++q) {
      const auto& row = rows[q];
      if (row.at("query_id").get<std::int64_t>() != r.query_ids[q]) {
        fail(ErrorCode::FormatError, "rankings[" + std::to_string(q) + "].query_id out of order");
      }
      QueryRanking qr;
      qr.distances = row.at("distances").get<std::vector<double>>();
      for (auto id : row.at("gallery_ids").get<std::vector<std::int64_t>>()) {
        auto it = std::lower_bound(perm.begin(), perm.end(), id,
                                   [&](std::size_t p, std::int64_t v) { return r.gallery_ids[p] < v; });
        if (it == perm.end() || r.gallery_ids[*it] != id) {
          fail(ErrorCode::FormatError, "rankings[" + std::to_string(q) + "] references unknown gallery id " + std::to_string(id));
        }
        qr.order.push_back(static_cast<std::uint32_t>(*it));
      }
      if (qr.order.size() != r.gallery_ids.size() || qr.distances.size() != qr.order.size()) {
        fail(ErrorCode::FormatError, "rankings[" + std::to_string(q) + "] is not a full ranking");
      }
      r.queries.push_back(std::move(qr));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed ranking JSON: ") + e.what());
  }
  return r;
}

}  // namespace retri
