#include "retri/pipeline.hpp"

#include "test_helpers.hpp"

using namespace retri;
using retri::testing::TempDir;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(RETRI_FIXTURE_DIR) / "synthetic";

PipelineConfig fixture_config(const std::vector<std::string>& overrides = {}) {
  return load_config(kFixture / "config.yaml", overrides);
}

}  // namespace

TEST(Pipeline, FixtureRunIsDeterministic) {
  const auto c = fixture_config();
  const auto a = run_pipeline(c), b = run_pipeline(c);
  EXPECT_EQ(ranking_to_json(a.ranking).dump(), ranking_to_json(b.ranking).dump());
  EXPECT_EQ(report_to_json(a.report).dump(), report_to_json(b.report).dump());
  EXPECT_EQ(a.report.num_queries, 8u);
  EXPECT_EQ(a.ranking.gallery_ids.size(), 32u);
  EXPECT_GE(a.report.map, 0.0);
  EXPECT_LE(a.report.map, 1.0);
}

TEST(Pipeline, SplitExecutionMatchesSingleShot) {
  TempDir dir("split");
  const auto c = fixture_config();
  const auto whole = run_pipeline(c);

  const auto m = load_manifests(c);
  write_pack(extract_split(c, Split::Query, m.query), dir / "q.fpk");
  write_pack(extract_split(c, Split::Gallery, m.gallery), dir / "g.fpk");
  const auto ranking = rank_packs(c, read_pack(dir / "q.fpk"), read_pack(dir / "g.fpk"));
  detail::write_text_file(dir / "r.json", ranking_to_json(ranking).dump(2));
  const auto reread = ranking_from_json(nlohmann::json::parse(retri::testing::slurp(dir / "r.json")));
  const auto report = evaluate_ranking(c, reread, m);

  EXPECT_EQ(ranking_to_json(reread).dump(), ranking_to_json(whole.ranking).dump());
  EXPECT_EQ(report_to_json(report).dump(), report_to_json(whole.report).dump());
}

TEST(Pipeline, PackFileBackendMatchesMock) {
  TempDir dir("packfile");
  const auto c = fixture_config();
  const auto m = load_manifests(c);
  write_pack(extract_split(c, Split::Query, m.query), dir / "q.fpk");
  write_pack(extract_split(c, Split::Gallery, m.gallery), dir / "g.fpk");
  const auto from_files = fixture_config({"extract={backend: pack_file, query_pack: " + (dir / "q.fpk").string() +
                                          ", gallery_pack: " + (dir / "g.fpk").string() + "}"});
  EXPECT_EQ(run_pipeline(from_files).ranking, run_pipeline(c).ranking);
}

TEST(Pipeline, VectorsPacksBypassAggregation) {
  const auto c = fixture_config({"transform.steps=[L2N]", "rerank={}"});
  const auto m = load_manifests(c);
  const auto qm = extract_split(c, Split::Query, m.query), gm = extract_split(c, Split::Gallery, m.gallery);
  const auto fitted = fit_aggregator(c.aggregate, gm);
  const auto qv = aggregate_pack(qm, fitted), gv = aggregate_pack(gm, fitted);
  EXPECT_EQ(rank_packs(c, qv, gv), rank_packs(c, qm, gm));
}

TEST(Pipeline, StageErrorsPropagate) {
  EXPECT_RETRI_ERROR(run_pipeline(fixture_config({"rerank.qe_k=100"})), ErrorCode::KTooLarge);
  EXPECT_RETRI_ERROR(run_pipeline(fixture_config({"transform.steps=[PCA(100)]"})), ErrorCode::RankDeficient);
  EXPECT_RETRI_ERROR(run_pipeline(fixture_config({"data.query_manifest=missing.json"})), ErrorCode::IoError);
}

TEST(Pipeline, ReidProtocolRuns) {
  const auto r = run_pipeline(fixture_config({"eval.protocol=reid"}));
  EXPECT_EQ(r.report.num_valid_queries, 8u);
}

TEST(Pipeline, CosineAndDbaRun) {
  const auto r = run_pipeline(fixture_config({"index.metric=cosine", "enhance.dba_k=3"}));
  EXPECT_EQ(r.report.num_queries, 8u);
}

TEST(Pipeline, TwoFlipDoublesViews) {
  const auto c = fixture_config({"preprocess.ops=[\"DR(32,32)\", TF]"});
  const auto m = load_manifests(c);
  const auto p = extract_split(c, Split::Gallery, m.gallery);
  EXPECT_EQ(p.views, 2u);
  EXPECT_EQ(p.shape[0], 64u);
  EXPECT_NO_THROW(run_pipeline(c));
}
