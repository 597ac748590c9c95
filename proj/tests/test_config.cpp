#include "retri/config.hpp"

#include "test_helpers.hpp"

using namespace retri;

namespace {

const char* kMinimal = R"(
data:
  query_manifest: q.json
  gallery_manifest: g.json
)";

std::string with(const std::string& extra) { return std::string(kMinimal) + extra; }

void expect_config_error(const std::string& text, const std::string& path, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config_text(text, overrides);
    ADD_FAILURE() << "expected ConfigError naming " << path;
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError) << e.what();
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_config_text(kMinimal, {}, "/base");
  EXPECT_EQ(c.data.query_manifest, std::filesystem::path("/base/q.json"));
  EXPECT_EQ(c.extract.backend, "mock");
  EXPECT_TRUE(std::holds_alternative<agg::GAP>(c.aggregate));
  EXPECT_TRUE(c.transform.steps.empty());
  EXPECT_EQ(c.metric, Metric::Euclidean);
  EXPECT_FALSE(c.dba_k || c.qe_k || c.kr);
  EXPECT_EQ(c.eval.protocol, Protocol::Cbir);
  EXPECT_EQ(c.eval.recall_ks, (std::vector<std::size_t>{1, 2, 4, 8}));
}

TEST(Config, FullDocument) {
  const auto c = parse_config_text(with(R"yaml(
extract: {backend: mock, seed: 7, query_seed: 9, channels: 8, height: 3, width: 4, label_signal: 0.25}
preprocess:
  ops: [SR(256), "CC(224, 224)", TF]
  mean: [0.5, 0.5, 0.5]
aggregate: {method: CroW, params: {a: 1, b: 3}}
transform: {steps: [L2N, SVD_w(64), L2N]}
index: {metric: cosine}
enhance: {dba_k: 3}
rerank: {qe_k: 2, kr: {k1: 10, k2: 4, lambda: 0.5}}
eval: {protocol: reid, recall_ks: [1, 5]}
)yaml"));
  EXPECT_EQ(c.extract.mock.seed, 7u);
  EXPECT_EQ(c.extract.query_seed, 9u);
  EXPECT_FLOAT_EQ(c.extract.mock.label_signal, 0.25f);
  ASSERT_EQ(c.preprocess.ops.size(), 3u);
  EXPECT_EQ(op_name(c.preprocess.ops[1]), "CC(224,224)");
  EXPECT_FLOAT_EQ(c.preprocess.mean[0], 0.5f);
  const auto& crow = std::get<agg::CroW>(c.aggregate);
  EXPECT_EQ(crow.a, 1.0);
  EXPECT_EQ(crow.b, 3.0);
  ASSERT_EQ(c.transform.steps.size(), 3u);
  EXPECT_EQ(step_name(c.transform.steps[1]), "SVD_w(64)");
  EXPECT_EQ(c.metric, Metric::Cosine);
  EXPECT_EQ(c.dba_k, 3u);
  EXPECT_EQ(c.qe_k, 2u);
  EXPECT_EQ(c.kr->k1, 10u);
  EXPECT_EQ(c.kr->lambda, 0.5);
  EXPECT_EQ(c.eval.protocol, Protocol::Reid);
  const auto q = std::get<backend::Mock>(c.extract.spec(Split::Query).backend);
  const auto g = std::get<backend::Mock>(c.extract.spec(Split::Gallery).backend);
  EXPECT_EQ(q.seed, 9u);
  EXPECT_EQ(g.seed, 7u);
}

TEST(Config, ProjectionDefaultDim) {
  const auto c = parse_config_text(with("transform: {steps: [PCA_w]}\n"));
  EXPECT_EQ(std::get<step::Projection>(c.transform.steps[0]).dim, 512u);
}

TEST(Config, UnknownAggregateMethodNamesField) {
  expect_config_error(with("aggregate: {method: FOO}\n"), "aggregate.method");
}

TEST(Config, UnknownKeysAreErrors) {
  expect_config_error(with("aggregate: {method: GeM, p: 3}\n"), "aggregate.p");
  expect_config_error(with("aggregate: {method: GeM, params: {q: 3}}\n"), "aggregate.params.q");
  expect_config_error(with("bogus: 1\n"), "bogus");
  expect_config_error(with("eval: {protocl: reid}\n"), "eval.protocl");
}

TEST(Config, BadValues) {
  expect_config_error(with("extract: {backend: mock, channels: -2}\n"), "extract.channels");
  expect_config_error(with("preprocess: {ops: [XX(3)]}\n"), "preprocess.ops[0]");
  expect_config_error(with("preprocess: {ops: [TF, CC(2,2)]}\n"), "preprocess.ops");
  expect_config_error(with("transform: {steps: [PCA(4), SVD(4)]}\n"), "transform.steps");
  expect_config_error(with("rerank: {kr: {k1: 2, k2: 5}}\n"), "rerank.kr.k2");
  expect_config_error(with("eval: {protocol: cmc}\n"), "eval.protocol");
  expect_config_error(with("eval: {recall_ks: [4, 1]}\n"), "eval.recall_ks");
  expect_config_error(with("index: {metric: manhattan}\n"), "index.metric");
  expect_config_error(with("extract: {backend: pack_file, query_pack: a.fpk}\n"), "extract.gallery_pack");
  expect_config_error("data: {query_manifest: q.json}\n", "data.gallery_manifest");
}

TEST(Config, SyntaxErrorIsConfigError) {
  EXPECT_RETRI_ERROR(parse_config_text("data: [unclosed\n"), ErrorCode::ConfigError);
}

TEST(Config, Overrides) {
  const auto c = parse_config_text(with("aggregate: {method: GeM}\n"),
                                   {"aggregate.params.p=5", "rerank.qe_k=3", "eval.recall_ks=[1, 10]"});
  EXPECT_EQ(std::get<agg::GeM>(c.aggregate).p, 5.0);
  EXPECT_EQ(c.qe_k, 3u);
  EXPECT_EQ(c.eval.recall_ks, (std::vector<std::size_t>{1, 10}));
  EXPECT_EQ(c.source["aggregate"]["params"]["p"].as<int>(), 5);
  expect_config_error(kMinimal, "aggregate.metod", {"aggregate.metod=GAP"});
  EXPECT_RETRI_ERROR(parse_config_text(kMinimal, {"no-equals-sign"}), ErrorCode::ConfigError);
}

TEST(Config, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorCode::ConfigError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::FormatError), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::KTooLarge), 4);
}

TEST(Config, LoadsBundledFixture) {
  const auto c = load_config(std::filesystem::path(RETRI_FIXTURE_DIR) / "synthetic" / "config.yaml");
  EXPECT_EQ(c.extract.mock.seed, 7u);
  EXPECT_TRUE(std::filesystem::exists(c.data.query_manifest));
}

TEST(Config, SectionKeyIsStable) {
  const auto a = parse_config_text(with("aggregate: {method: GeM, params: {p: 3}}\n"));
  const auto b = parse_config_text(with("aggregate:\n  method: GeM\n  params:\n    p: 3\n"));
  EXPECT_EQ(section_key(a, "aggregate"), section_key(b, "aggregate"));
  EXPECT_NE(section_key(a, "aggregate"), section_key(a, "transform"));
}
