#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retri/error.hpp"
#include "retri/index.hpp"
#include "retri/manifest.hpp"

namespace retri {

enum class Protocol { Cbir, Reid };
enum class Relevance { Relevant, Irrelevant, Ignored };

inline std::string_view to_string(Protocol p) { return p == Protocol::Cbir ? "cbir" : "reid"; }
inline std::string_view to_string(Relevance r) {
  return r == Relevance::Relevant ? "relevant" : (r == Relevance::Irrelevant ? "irrelevant" : "ignored");
}

struct EvalSpec {
  Protocol protocol = Protocol::Cbir;
  std::vector<std::size_t> recall_ks{1, 2, 4, 8};
};

struct EvalReport {
  double map = 0.0;
  std::map<std::size_t, double> recall_at;
  std::vector<double> per_query_ap;
  std::vector<std::int64_t> valid_query_ids;
  std::size_t num_valid_queries = 0;
  std::size_t num_queries = 0;
};

inline void validate_eval_spec(const EvalSpec& spec) {
  for (std::size_t i = 0; i < spec.recall_ks.size(); ++i) {
    if (spec.recall_ks[i] == 0 || (i > 0 && spec.recall_ks[i] <= spec.recall_ks[i - 1])) {
      fail(ErrorCode::InvalidSpec, "recall_ks must be positive and strictly increasing");
    }
  }
}

/// Relevance of every gallery record to `query`, in gallery manifest order.
/// Junk records are ignored; under re-ID, same-identity same-camera records are ignored too.
inline std::vector<Relevance> relevance_mask(const ImageRecord& query, const DatasetManifest& gallery, Protocol protocol) {
  if (protocol == Protocol::Reid) {
    if (!query.camera_id) fail(ErrorCode::MissingCamera, "re-ID query '" + query.path + "' has no camera_id");
    if (!gallery.has_cameras()) fail(ErrorCode::MissingCamera, "re-ID gallery records carry no camera_id");
  }
  std::vector<Relevance> out;
  out.reserve(gallery.size());
  for (const auto& g : gallery.records) {
    if (g.is_junk) {
      out.push_back(Relevance::Ignored);
    } else if (g.label != query.label) {
      out.push_back(Relevance::Irrelevant);
    } else if (protocol == Protocol::Reid && g.camera_id == query.camera_id) {
      out.push_back(Relevance::Ignored);
    } else {
      out.push_back(Relevance::Relevant);
    }
  }
  return out;
}

/// Finite-sum AP: sum over hits of precision at the hit's cut, divided by the
/// number of relevant items. Returns 0 when nothing is relevant.
inline double average_precision(const std::vector<bool>& ranked_relevance) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (!ranked_relevance[k]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits ? acc / static_cast<double>(hits) : 0.0;
}

namespace detail {

inline const ImageRecord& record_at(const DatasetManifest& m, std::int64_t id, const char* which) {
  if (id < 0 || static_cast<std::size_t>(id) >= m.size()) {
    fail(ErrorCode::IdCoverageError, std::string(which) + " id " + std::to_string(id) + " is outside the manifest");
  }
  return m.records[static_cast<std::size_t>(id)];
}

}  // namespace detail

/// mAP and CMC-style recall@k over queries that have at least one relevant item.
inline EvalReport evaluate(const RankingResult& rankings, const DatasetManifest& queries,
                           const DatasetManifest& gallery, const EvalSpec& spec) {
  validate_eval_spec(spec);
  EvalReport report;
  report.num_queries = rankings.queries.size();
  std::map<std::size_t, std::size_t> hits_at;
  for (std::size_t q = 0; q < rankings.queries.size(); ++q) {
    const ImageRecord& query = detail::record_at(queries, rankings.query_ids[q], "query");
    const auto mask = relevance_mask(query, gallery, spec.protocol);
    std::vector<bool> ranked;
    ranked.reserve(rankings.queries[q].order.size());
    for (auto pos : rankings.queries[q].order) {
      detail::record_at(gallery, rankings.gallery_ids[pos], "gallery");
      const Relevance r = mask[static_cast<std::size_t>(rankings.gallery_ids[pos])];
      if (r != Relevance::Ignored) ranked.push_back(r == Relevance::Relevant);
    }
    const auto first_hit = std::find(ranked.begin(), ranked.end(), true);
    if (first_hit == ranked.end()) continue;
    const auto first_rank = static_cast<std::size_t>(first_hit - ranked.begin()) + 1;
    for (std::size_t k : spec.recall_ks) hits_at[k] += first_rank <= k ? 1 : 0;
    report.per_query_ap.push_back(average_precision(ranked));
    report.valid_query_ids.push_back(rankings.query_ids[q]);
  }
  report.num_valid_queries = report.per_query_ap.size();
  if (report.num_valid_queries == 0) fail(ErrorCode::NoValidQueries, "no query has a relevant gallery item");
  double sum = 0.0;
  for (double ap : report.per_query_ap) sum += ap;
  report.map = sum / static_cast<double>(report.num_valid_queries);
  for (std::size_t k : spec.recall_ks) {
    report.recall_at[k] = static_cast<double>(hits_at[k]) / static_cast<double>(report.num_valid_queries);
  }
  return report;
}

/// {"map", "recall_at": {"k": value}, "num_queries", "num_valid_queries",
///  "per_query": [{"query_id", "ap"}]}
inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["map"] = r.map;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
  j["recall_at"] = std::move(recall);
  j["num_queries"] = r.num_queries;
  j["num_valid_queries"] = r.num_valid_queries;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.per_query_ap.size(); ++i) {
    per.push_back({{"query_id", r.valid_query_ids[i]}, {"ap", r.per_query_ap[i]}});
  }
  j["per_query"] = std::move(per);
  return j;
}

/// Top-k listing per query, keyed by query path:
/// {"<query path>": {"label", "results": [{"rank", "path", "label", "distance", "relevance"}]}}
/// k larger than the gallery yields the full gallery.
inline nlohmann::ordered_json topk_to_json(const RankingResult& rankings, const DatasetManifest& queries,
                                           const DatasetManifest& gallery, std::size_t k, Protocol protocol) {
  if (k < 1) fail(ErrorCode::InvalidSpec, "top-k export needs k >= 1");
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (std::size_t q = 0; q < rankings.queries.size(); ++q) {
    const ImageRecord& query = detail::record_at(queries, rankings.query_ids[q], "query");
    const auto mask = relevance_mask(query, gallery, protocol);
    const auto& qr = rankings.queries[q];
    nlohmann::ordered_json results = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < std::min(k, qr.order.size()); ++r) {
      const auto id = rankings.gallery_ids[qr.order[r]];
      const ImageRecord& g = detail::record_at(gallery, id, "gallery");
      nlohmann::ordered_json item;
      item["rank"] = r + 1;
      item["path"] = g.path;
      item["label"] = g.label;
      item["distance"] = qr.distances[r];
      item["relevance"] = to_string(mask[static_cast<std::size_t>(id)]);
      results.push_back(std::move(item));
    }
    out[query.path] = {{"label", query.label}, {"results", std::move(results)}};
  }
  return out;
}

inline void export_topk(const RankingResult& rankings, const DatasetManifest& queries, const DatasetManifest& gallery,
                        std::size_t k, Protocol protocol, const std::filesystem::path& out_path) {
  const auto j = topk_to_json(rankings, queries, gallery, k, protocol);
  detail::write_text_file(out_path, j.dump(2) + "\n");
}

}  // namespace retri
