#include "retri/evaluate.hpp"

#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace retri;
using retri::testing::slurp;
using retri::testing::TempDir;

namespace {

ImageRecord rec(std::string path, std::string label, std::optional<std::uint32_t> cam = std::nullopt, bool junk = false) {
  return ImageRecord{std::move(path), std::move(label), cam, junk};
}

DatasetManifest manifest(std::vector<ImageRecord> r) {
  DatasetManifest m;
  m.records = std::move(r);
  return m;
}

RankingResult single_ranking(std::vector<std::uint32_t> order, std::size_t n_queries = 1) {
  RankingResult r;
  for (std::size_t q = 0; q < n_queries; ++q) r.query_ids.push_back(static_cast<std::int64_t>(q));
  for (std::size_t g = 0; g < order.size(); ++g) r.gallery_ids.push_back(static_cast<std::int64_t>(g));
  for (std::size_t q = 0; q < n_queries; ++q) {
    QueryRanking qr{order, {}};
    for (std::size_t i = 0; i < order.size(); ++i) qr.distances.push_back(static_cast<double>(i));
    r.queries.push_back(qr);
  }
  return r;
}

}  // namespace

TEST(Evaluate, AveragePrecisionExamples) {
  EXPECT_NEAR(average_precision({true, false, true, false}), 0.8333333333, 1e-9);
  EXPECT_DOUBLE_EQ(average_precision({false, true}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({true, true}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({false, false}), 0.0);
}

TEST(Evaluate, ReidMask) {
  const auto q = rec("q.jpg", "7", 1);
  const auto g = manifest({rec("a.jpg", "7", 1), rec("b.jpg", "7", 2), rec("c.jpg", "8", 1)});
  const auto mask = relevance_mask(q, g, Protocol::Reid);
  EXPECT_EQ(mask, (std::vector<Relevance>{Relevance::Ignored, Relevance::Relevant, Relevance::Irrelevant}));
  const auto cbir = relevance_mask(q, g, Protocol::Cbir);
  EXPECT_EQ(cbir, (std::vector<Relevance>{Relevance::Relevant, Relevance::Relevant, Relevance::Irrelevant}));
}

TEST(Evaluate, JunkIgnoredUnderBothProtocols) {
  const auto q = rec("q.jpg", "7", 1);
  const auto g = manifest({rec("a.jpg", "7", 2, true), rec("b.jpg", "8", 2, true)});
  for (auto p : {Protocol::Cbir, Protocol::Reid})
    EXPECT_EQ(relevance_mask(q, g, p), (std::vector<Relevance>{Relevance::Ignored, Relevance::Ignored}));
}

TEST(Evaluate, MissingCamera) {
  const auto g = manifest({rec("a.jpg", "7", 2)});
  EXPECT_RETRI_ERROR(relevance_mask(rec("q.jpg", "7"), g, Protocol::Reid), ErrorCode::MissingCamera);
  EXPECT_RETRI_ERROR(relevance_mask(rec("q.jpg", "7", 1), manifest({rec("a.jpg", "7")}), Protocol::Reid),
                     ErrorCode::MissingCamera);
}

TEST(Evaluate, IgnoredEntriesAreDroppedBeforeScoring) {
  // ranked: ignored, relevant, irrelevant -> AP over [1, 0] is 1
  const auto qs = manifest({rec("q.jpg", "7", 1)});
  const auto g = manifest({rec("a.jpg", "7", 1), rec("b.jpg", "7", 2), rec("c.jpg", "8", 1)});
  const auto report = evaluate(single_ranking({0, 1, 2}), qs, g, {Protocol::Reid, {1, 2}});
  EXPECT_DOUBLE_EQ(report.map, 1.0);
  EXPECT_DOUBLE_EQ(report.recall_at.at(1), 1.0);
}

TEST(Evaluate, RecallIsCmcStyle) {
  const auto qs = manifest({rec("q0.jpg", "a"), rec("q1.jpg", "b")});
  const auto g = manifest({rec("g0.jpg", "b"), rec("g1.jpg", "a"), rec("g2.jpg", "a")});
  const auto report = evaluate(single_ranking({0, 1, 2}, 2), qs, g, {Protocol::Cbir, {1, 2}});
  EXPECT_DOUBLE_EQ(report.recall_at.at(1), 0.5);
  EXPECT_DOUBLE_EQ(report.recall_at.at(2), 1.0);
  EXPECT_NEAR(report.map, (0.5 * (1.0 / 2 + 2.0 / 3) + 1.0) / 2, 1e-12);
}

TEST(Evaluate, QueriesWithoutRelevantItemsAreSkipped) {
  const auto qs = manifest({rec("q0.jpg", "a"), rec("q1.jpg", "z")});
  const auto g = manifest({rec("g0.jpg", "a"), rec("g1.jpg", "b")});
  const auto report = evaluate(single_ranking({0, 1}, 2), qs, g, {});
  EXPECT_EQ(report.num_queries, 2u);
  EXPECT_EQ(report.num_valid_queries, 1u);
  EXPECT_EQ(report.valid_query_ids, (std::vector<std::int64_t>{0}));
  EXPECT_RETRI_ERROR(evaluate(single_ranking({0, 1}, 1), manifest({rec("q.jpg", "z")}), g, {}), ErrorCode::NoValidQueries);
}

TEST(Evaluate, MatchesRationalOracle) {
  SplitMix64 rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(30);
    const Protocol protocol = t % 2 ? Protocol::Reid : Protocol::Cbir;
    DatasetManifest g;
    for (std::size_t i = 0; i < n; ++i)
      g.records.push_back(rec("g" + std::to_string(i), std::to_string(rng.below(3)), static_cast<std::uint32_t>(rng.below(2)),
                              rng.below(10) == 0));
    const auto qs = manifest({rec("q", std::to_string(rng.below(3)), static_cast<std::uint32_t>(rng.below(2)))});
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto mask = relevance_mask(qs.records[0], g, protocol);
    std::vector<int> rel;
    for (auto p : order) {
      if (mask[p] != Relevance::Ignored) rel.push_back(mask[p] == Relevance::Relevant);
    }
    if (std::count(rel.begin(), rel.end(), 1) == 0) continue;
    const auto report = evaluate(single_ranking(order), qs, g, {protocol, {1}});
    EXPECT_NEAR(report.map, static_cast<double>(oracle::exact_ap(rel)), 1e-9);
  }
}

TEST(Evaluate, InvalidRecallKs) {
  EXPECT_RETRI_ERROR(validate_eval_spec({Protocol::Cbir, {4, 2}}), ErrorCode::InvalidSpec);
  EXPECT_RETRI_ERROR(validate_eval_spec({Protocol::Cbir, {0}}), ErrorCode::InvalidSpec);
}

TEST(Evaluate, TopkExport) {
  TempDir dir("topk");
  const auto qs = manifest({rec("q/a.jpg", "a")});
  const auto g = manifest({rec("g0.jpg", "b"), rec("g1.jpg", "a", std::nullopt, true), rec("g2.jpg", "a")});
  export_topk(single_ranking({2, 1, 0}), qs, g, 5, Protocol::Cbir, dir / "top.json");
  const auto j = nlohmann::json::parse(slurp(dir / "top.json"));
  const auto& results = j.at("q/a.jpg").at("results");
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(results[0]["path"], "g2.jpg");
  EXPECT_EQ(results[0]["relevance"], "relevant");
  EXPECT_EQ(results[1]["relevance"], "ignored");
  EXPECT_EQ(results[2]["relevance"], "irrelevant");
  EXPECT_EQ(results[2]["rank"], 3);
  EXPECT_EQ(topk_to_json(single_ranking({2, 1, 0}), qs, g, 1, Protocol::Cbir)["q/a.jpg"]["results"].size(), 1u);
}
