#pragma once

#include <optional>
#include <utility>

#include "retri/aggregate.hpp"
#include "retri/config.hpp"
#include "retri/enhance_rerank.hpp"
#include "retri/evaluate.hpp"
#include "retri/extractor.hpp"
#include "retri/featurepack.hpp"
#include "retri/index.hpp"
#include "retri/manifest.hpp"
#include "retri/transform.hpp"

namespace retri {

struct Manifests {
  DatasetManifest query;
  DatasetManifest gallery;
};

inline Manifests load_manifests(const PipelineConfig& c) {
  return {load_manifest(c.data.query_manifest), load_manifest(c.data.gallery_manifest)};
}

inline FeaturePack extract_split(const PipelineConfig& c, Split split, const DatasetManifest& manifest,
                                 const ImageLoader& loader = {}) {
  return extract(manifest, c.extract.spec(split), c.preprocess, loader);
}

/// Query and gallery descriptors after aggregation and the transform chain.
struct Descriptors {
  FeaturePack query;
  FeaturePack gallery;
  std::optional<FittedAggregator> aggregator;
  FittedTransform transform;
};

/// Aggregates map packs (vectors packs pass through), fits the transform chain
/// on the gallery and applies it to both sides.
inline Descriptors describe(const PipelineConfig& c, const FeaturePack& query, const FeaturePack& gallery) {
  if (query.kind != gallery.kind) fail(ErrorCode::ShapeMismatch, "query and gallery packs differ in kind");
  Descriptors d;
  FeaturePack qv, gv;
  if (gallery.kind == PackKind::Maps) {
    d.aggregator = fit_aggregator(c.aggregate, gallery);
    gv = aggregate_pack(gallery, *d.aggregator);
    qv = aggregate_pack(query, *d.aggregator);
  } else {
    gv = gallery;
    qv = query;
  }
  d.transform = fit_transform_chain(c.transform, gv.matrix());
  d.gallery = apply_transform_chain(gv, d.transform);
  d.query = apply_transform_chain(qv, d.transform);
  return d;
}

/// DBA, base ranking, query expansion and k-reciprocal re-ranking, each when configured.
inline RankingResult enhance_and_rank(const PipelineConfig& c, const FeaturePack& query, const FeaturePack& gallery) {
  MatrixF g = gallery.matrix();
  MatrixF q = query.matrix();
  if (c.dba_k) g = dba(g, *c.dba_k, c.metric);
  const GalleryIndex index(g, gallery.ids, c.metric);
  RankingResult ranking = index.rank(q, query.ids);
  if (c.qe_k) {
    q = query_expand_all(q, ranking, g, *c.qe_k);
    ranking = index.rank(q, query.ids);
  }
  if (c.kr) {
    if (c.metric == Metric::Cosine) {
      for (std::size_t r = 0; r < q.rows(); ++r) l2_normalize_inplace(q.row(r));
      for (std::size_t r = 0; r < g.rows(); ++r) l2_normalize_inplace(g.row(r));
    }
    ranking = k_reciprocal_rerank(q, g, ranking, *c.kr);
  }
  return ranking;
}

/// Everything between extraction and evaluation.
inline RankingResult rank_packs(const PipelineConfig& c, const FeaturePack& query, const FeaturePack& gallery) {
  const Descriptors d = describe(c, query, gallery);
  return enhance_and_rank(c, d.query, d.gallery);
}

inline EvalReport evaluate_ranking(const PipelineConfig& c, const RankingResult& ranking, const Manifests& m) {
  return evaluate(ranking, m.query, m.gallery, c.eval);
}

struct PipelineResult {
  RankingResult ranking;
  EvalReport report;
};

inline PipelineResult run_pipeline(const PipelineConfig& c, const ImageLoader& loader = {}) {
  const Manifests m = load_manifests(c);
  const FeaturePack q = extract_split(c, Split::Query, m.query, loader);
  const FeaturePack g = extract_split(c, Split::Gallery, m.gallery, loader);
  PipelineResult out;
  out.ranking = rank_packs(c, q, g);
  out.report = evaluate_ranking(c, out.ranking, m);
  return out;
}

}  // namespace retri
