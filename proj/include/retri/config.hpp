#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "retri/aggregate.hpp"
#include "retri/enhance_rerank.hpp"
#include "retri/error.hpp"
#include "retri/evaluate.hpp"
#include "retri/extractor.hpp"
#include "retri/index.hpp"
#include "retri/manifest.hpp"
#include "retri/preprocess.hpp"
#include "retri/transform.hpp"

namespace retri {

enum class Split { Query, Gallery };

inline std::string_view to_string(Split s) { return s == Split::Query ? "query" : "gallery"; }

struct DataConfig {
  std::filesystem::path query_manifest;
  std::filesystem::path gallery_manifest;
  /// Directory that manifest paths are relative to; only image-reading backends use it.
  std::filesystem::path image_root;
};

/// Extractor section. The mock backend draws query maps from `query_seed` so
/// that query i and gallery i never share noise.
struct ExtractConfig {
  std::string backend = "mock";
  std::string layer_tag = "pool5";
  backend::Mock mock;
  std::uint64_t query_seed = 0x9E3779B97F4A7C15ull;
  std::filesystem::path query_pack;
  std::filesystem::path gallery_pack;
  std::string command;

  ExtractorSpec spec(Split split) const {
    ExtractorSpec out;
    out.layer_tag = layer_tag;
    if (backend == "mock") {
      backend::Mock m = mock;
      if (split == Split::Query) m.seed = query_seed;
      out.backend = m;
    } else if (backend == "pack_file") {
      out.backend = backend::PackFile{split == Split::Query ? query_pack : gallery_pack};
    } else {
      out.backend = backend::Subprocess{command};
    }
    return out;
  }
};

struct PipelineConfig {
  DataConfig data;
  ExtractConfig extract;
  TransformSpec preprocess;
  AggregatorSpec aggregate = agg::GAP{};
  TransformChainSpec transform;
  Metric metric = Metric::Euclidean;
  std::optional<std::size_t> dba_k;
  std::optional<std::size_t> qe_k;
  std::optional<KReciprocalSpec> kr;
  EvalSpec eval;
  /// Raw document after overrides; search axes and cache keys read from it.
  YAML::Node source;
  std::filesystem::path base_dir;

  EnhanceRerankSpec enhance_rerank() const { return {dba_k, qe_k, kr}; }
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& msg) {
  fail(ErrorCode::ConfigError, path + ": " + msg);
}

inline std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

inline void require_map(const YAML::Node& n, const std::string& path) {
  if (!n.IsMap()) config_fail(path, "expected a mapping");
}

/// Rejects keys of `n` not listed in `allowed`.
inline void check_keys(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
  require_map(n, path);
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) config_fail(join_path(path, key), "unknown key");
  }
}

template <typename T>
T scalar(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) config_fail(path, "expected a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_fail(path, "cannot convert '" + n.Scalar() + "'");
  }
}

template <typename T>
T scalar_or(const YAML::Node& parent, const std::string& key, const std::string& path, T fallback) {
  const YAML::Node n = parent[key];
  return n ? scalar<T>(n, join_path(path, key)) : fallback;
}

inline std::size_t positive(const YAML::Node& n, const std::string& path) {
  const auto v = scalar<long long>(n, path);
  if (v < 1) config_fail(path, "must be a positive integer");
  return static_cast<std::size_t>(v);
}

template <typename T>
std::vector<T> scalar_list(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) config_fail(path, "expected a list");
  std::vector<T> out;
  for (std::size_t i = 0; i < n.size(); ++i) out.push_back(scalar<T>(n[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline PreprocessOp parse_op(const std::string& text, const std::string& path) {
  static const std::regex re(R"(\s*(DR|PR|SR|CC|TF|TC)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    const bool split = text.find('(') != std::string::npos && text.find(')') == std::string::npos;
    config_fail(path, "unknown preprocessing op '" + text + "'" +
                          (split ? " (quote ops with two arguments inside [...] lists)" : ""));
  }
  const std::string name = m[1];
  const bool has1 = m[2].matched, has2 = m[3].matched;
  const auto a = has1 ? std::stoul(m[2]) : 0ul;
  const auto b = has2 ? std::stoul(m[3]) : a;
  auto arity = [&](bool one, bool two) {
    if (has1 != one || (has2 && !two)) config_fail(path, "wrong arguments for '" + text + "'");
  };
  if (name == "TF") {
    arity(false, false);
    return ops::TwoFlip{};
  }
  if (name == "PR" || name == "SR") {
    arity(true, false);
    if (name == "PR") return ops::PadResize{a};
    return ops::ShorterResize{a};
  }
  arity(true, true);
  if (name == "DR") return ops::DirectResize{a, b};
  if (name == "CC") return ops::CenterCrop{a, b};
  return ops::TenCrop{a, b};
}

inline TransformStep parse_step(const std::string& text, const std::string& path) {
  static const std::regex re(R"(\s*(L2N|PCA|SVD)(_w)?\s*(?:\(\s*(\d+)\s*\))?\s*)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) config_fail(path, "unknown transform step '" + text + "'");
  if (m[1] == "L2N") {
    if (m[2].matched || m[3].matched) config_fail(path, "L2N takes no arguments");
    return step::L2N{};
  }
  step::Projection p;
  p.kind = m[1] == "PCA" ? step::ProjectionKind::PCA : step::ProjectionKind::SVD;
  p.whiten = m[2].matched;
  if (m[3].matched) p.dim = std::stoul(m[3]);
  return p;
}

inline DataConfig parse_data(const YAML::Node& n, const std::filesystem::path& base) {
  check_keys(n, "data", {"query_manifest", "gallery_manifest", "image_root"});
  DataConfig d;
  for (const char* key : {"query_manifest", "gallery_manifest"}) {
    if (!n[key]) config_fail(std::string("data.") + key, "required");
  }
  d.query_manifest = resolve(base, scalar<std::string>(n["query_manifest"], "data.query_manifest"));
  d.gallery_manifest = resolve(base, scalar<std::string>(n["gallery_manifest"], "data.gallery_manifest"));
  d.image_root = n["image_root"] ? resolve(base, scalar<std::string>(n["image_root"], "data.image_root")) : base;
  return d;
}

inline ExtractConfig parse_extract(const YAML::Node& n, const std::filesystem::path& base) {
  require_map(n, "extract");
  ExtractConfig e;
  e.backend = scalar_or<std::string>(n, "backend", "extract", "mock");
  e.layer_tag = scalar_or<std::string>(n, "layer_tag", "extract", e.layer_tag);
  if (e.backend == "mock") {
    check_keys(n, "extract", {"backend", "layer_tag", "seed", "query_seed", "channels", "height", "width", "label_signal"});
    e.mock.seed = scalar_or<std::uint64_t>(n, "seed", "extract", 0);
    e.query_seed = scalar_or<std::uint64_t>(n, "query_seed", "extract", e.mock.seed ^ e.query_seed);
    e.mock.channels = n["channels"] ? positive(n["channels"], "extract.channels") : 16;
    e.mock.height = n["height"] ? positive(n["height"], "extract.height") : 7;
    e.mock.width = n["width"] ? positive(n["width"], "extract.width") : 7;
    e.mock.label_signal = scalar_or<float>(n, "label_signal", "extract", 0.0f);
  } else if (e.backend == "pack_file") {
    check_keys(n, "extract", {"backend", "layer_tag", "query_pack", "gallery_pack"});
    for (const char* key : {"query_pack", "gallery_pack"}) {
      if (!n[key]) config_fail(std::string("extract.") + key, "required for the pack_file backend");
    }
    e.query_pack = resolve(base, scalar<std::string>(n["query_pack"], "extract.query_pack"));
    e.gallery_pack = resolve(base, scalar<std::string>(n["gallery_pack"], "extract.gallery_pack"));
  } else if (e.backend == "subprocess") {
    check_keys(n, "extract", {"backend", "layer_tag", "command"});
    if (!n["command"]) config_fail("extract.command", "required for the subprocess backend");
    e.command = scalar<std::string>(n["command"], "extract.command");
  } else {
    config_fail("extract.backend", "unknown backend '" + e.backend + "' (mock, pack_file, subprocess)");
  }
  return e;
}

inline TransformSpec parse_preprocess(const YAML::Node& n) {
  check_keys(n, "preprocess", {"ops", "mean", "std"});
  TransformSpec t;
  if (n["ops"]) {
    const auto names = scalar_list<std::string>(n["ops"], "preprocess.ops");
    for (std::size_t i = 0; i < names.size(); ++i) t.ops.push_back(parse_op(names[i], "preprocess.ops[" + std::to_string(i) + "]"));
  }
  for (const char* key : {"mean", "std"}) {
    if (!n[key]) continue;
    const auto v = scalar_list<float>(n[key], std::string("preprocess.") + key);
    if (v.size() != 3) config_fail(std::string("preprocess.") + key, "expected 3 values");
    std::copy(v.begin(), v.end(), (std::string(key) == "mean" ? t.mean : t.std).begin());
  }
  try {
    validate_transform_spec(t);
  } catch (const Error& e) {
    config_fail("preprocess.ops", e.what());
  }
  return t;
}

inline AggregatorSpec parse_aggregate(const YAML::Node& n) {
  check_keys(n, "aggregate", {"method", "params"});
  if (!n["method"]) config_fail("aggregate.method", "required");
  const auto method = scalar<std::string>(n["method"], "aggregate.method");
  const YAML::Node params = n["params"] ? n["params"] : YAML::Node(YAML::NodeType::Map);
  const std::string pp = "aggregate.params";
  AggregatorSpec spec;
  if (method == "GAP") {
    check_keys(params, pp, {});
    spec = agg::GAP{};
  } else if (method == "GMP") {
    check_keys(params, pp, {});
    spec = agg::GMP{};
  } else if (method == "GeM") {
    check_keys(params, pp, {"p"});
    spec = agg::GeM{scalar_or<double>(params, "p", pp, 3.0)};
  } else if (method == "SPoC") {
    check_keys(params, pp, {"sigma_frac"});
    spec = agg::SPoC{scalar_or<double>(params, "sigma_frac", pp, 1.0 / 3.0)};
  } else if (method == "CroW") {
    check_keys(params, pp, {"a", "b", "eps"});
    spec = agg::CroW{scalar_or<double>(params, "a", pp, 2.0), scalar_or<double>(params, "b", pp, 2.0),
                     scalar_or<double>(params, "eps", pp, 1e-8)};
  } else if (method == "SCDA") {
    check_keys(params, pp, {});
    spec = agg::SCDA{};
  } else if (method == "RMAC") {
    check_keys(params, pp, {"levels", "overlap"});
    spec = agg::RMAC{params["levels"] ? positive(params["levels"], pp + ".levels") : 3,
                     scalar_or<double>(params, "overlap", pp, 0.4)};
  } else if (method == "PWA") {
    check_keys(params, pp, {"n_parts", "alpha"});
    spec = agg::PWA{params["n_parts"] ? positive(params["n_parts"], pp + ".n_parts") : 25,
                    scalar_or<double>(params, "alpha", pp, 2.0)};
  } else {
    config_fail("aggregate.method", "unknown method '" + method + "' (GAP, GMP, GeM, SPoC, CroW, SCDA, RMAC, PWA)");
  }
  try {
    validate_aggregator_spec(spec);
  } catch (const Error& e) {
    config_fail(pp, e.what());
  }
  return spec;
}

inline TransformChainSpec parse_transform(const YAML::Node& n) {
  check_keys(n, "transform", {"steps"});
  TransformChainSpec t;
  if (n["steps"]) {
    const auto names = scalar_list<std::string>(n["steps"], "transform.steps");
    for (std::size_t i = 0; i < names.size(); ++i)
      t.steps.push_back(parse_step(names[i], "transform.steps[" + std::to_string(i) + "]"));
  }
  try {
    validate_chain_spec(t);
  } catch (const Error& e) {
    config_fail("transform.steps", e.what());
  }
  return t;
}

inline Metric parse_index(const YAML::Node& n) {
  check_keys(n, "index", {"metric"});
  const auto m = scalar_or<std::string>(n, "metric", "index", "euclidean");
  if (m == "euclidean") return Metric::Euclidean;
  if (m == "cosine") return Metric::Cosine;
  config_fail("index.metric", "unknown metric '" + m + "' (euclidean, cosine)");
}

inline KReciprocalSpec parse_kr(const YAML::Node& n, const std::string& path) {
  check_keys(n, path, {"k1", "k2", "lambda"});
  KReciprocalSpec kr;
  if (n["k1"]) kr.k1 = positive(n["k1"], path + ".k1");
  if (n["k2"]) kr.k2 = positive(n["k2"], path + ".k2");
  kr.lambda = scalar_or<double>(n, "lambda", path, kr.lambda);
  if (kr.k2 > kr.k1) config_fail(path + ".k2", "must not exceed k1");
  if (!(kr.lambda >= 0.0 && kr.lambda <= 1.0)) config_fail(path + ".lambda", "must lie in [0, 1]");
  return kr;
}

inline EvalSpec parse_eval(const YAML::Node& n) {
  check_keys(n, "eval", {"protocol", "recall_ks"});
  EvalSpec e;
  const auto p = scalar_or<std::string>(n, "protocol", "eval", "cbir");
  if (p == "cbir") {
    e.protocol = Protocol::Cbir;
  } else if (p == "reid") {
    e.protocol = Protocol::Reid;
  } else {
    config_fail("eval.protocol", "unknown protocol '" + p + "' (cbir, reid)");
  }
  if (n["recall_ks"]) {
    const auto ks = scalar_list<long long>(n["recall_ks"], "eval.recall_ks");
    e.recall_ks.clear();
    for (auto k : ks) {
      if (k < 1) config_fail("eval.recall_ks", "values must be positive");
      e.recall_ks.push_back(static_cast<std::size_t>(k));
    }
  }
  try {
    validate_eval_spec(e);
  } catch (const Error& err) {
    config_fail("eval.recall_ks", err.what());
  }
  return e;
}

inline YAML::Node section(const YAML::Node& root, const char* name) {
  const YAML::Node n = root[name];
  if (!n || n.IsNull()) return YAML::Node(YAML::NodeType::Map);
  return n;
}

}  // namespace detail

/// Replaces the value at a dotted path, creating intermediate maps.
/// VALUE is parsed as YAML, so lists and maps may be given in flow style.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorCode::ConfigError, "override '" + assignment + "' is not KEY=VALUE");
  }
  const std::string key = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    detail::config_fail(key, std::string("bad override value: ") + e.msg);
  }
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    parts.push_back(key.substr(start, dot - start));
  }
  parts.push_back(key.substr(start));
  YAML::Node cur = root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (parts[i].empty()) detail::config_fail(key, "empty path component");
    if (!cur[parts[i]] || !cur[parts[i]].IsMap()) cur[parts[i]] = YAML::Node(YAML::NodeType::Map);
    cur.reset(cur[parts[i]]);
  }
  cur[parts.back()] = value;
}

/// Builds a config from a parsed document. Relative paths resolve against base_dir.
inline PipelineConfig parse_config(const YAML::Node& doc, const std::filesystem::path& base_dir = {}) {
  if (!doc.IsMap()) fail(ErrorCode::ConfigError, "config root must be a mapping");
  detail::check_keys(doc, "", {"data", "extract", "preprocess", "aggregate", "transform", "index", "enhance", "rerank",
                               "eval", "search"});
  PipelineConfig c;
  c.source = YAML::Clone(doc);
  c.base_dir = base_dir;
  if (!doc["data"]) detail::config_fail("data", "required");
  c.data = detail::parse_data(doc["data"], base_dir);
  c.extract = detail::parse_extract(detail::section(doc, "extract"), base_dir);
  c.preprocess = detail::parse_preprocess(detail::section(doc, "preprocess"));
  const YAML::Node aggregate = detail::section(doc, "aggregate");
  if (aggregate.size() == 0) {
    c.aggregate = agg::GAP{};
  } else {
    c.aggregate = detail::parse_aggregate(aggregate);
  }
  c.transform = detail::parse_transform(detail::section(doc, "transform"));
  c.metric = detail::parse_index(detail::section(doc, "index"));

  const YAML::Node enhance = detail::section(doc, "enhance");
  detail::check_keys(enhance, "enhance", {"dba_k"});
  if (enhance["dba_k"] && !enhance["dba_k"].IsNull()) c.dba_k = detail::positive(enhance["dba_k"], "enhance.dba_k");

  const YAML::Node rerank = detail::section(doc, "rerank");
  detail::check_keys(rerank, "rerank", {"qe_k", "kr"});
  if (rerank["qe_k"] && !rerank["qe_k"].IsNull()) c.qe_k = detail::positive(rerank["qe_k"], "rerank.qe_k");
  if (rerank["kr"] && !rerank["kr"].IsNull()) c.kr = detail::parse_kr(rerank["kr"], "rerank.kr");

  c.eval = detail::parse_eval(detail::section(doc, "eval"));

  const YAML::Node search = detail::section(doc, "search");
  detail::check_keys(search, "search", {"axes"});
  return c;
}

inline PipelineConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                                        const std::filesystem::path& base_dir = {}) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    fail(ErrorCode::ConfigError, "config syntax error at line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (doc.IsNull()) doc = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc, base_dir);
}

inline PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::string text;
  try {
    text = detail::read_text_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  return parse_config_text(text, overrides, path.parent_path());
}

/// Canonical text of one config section, used as a cache key.
inline std::string section_key(const PipelineConfig& c, const char* name) {
  YAML::Emitter out;
  out.SetMapFormat(YAML::Flow);
  out.SetSeqFormat(YAML::Flow);
  out << detail::section(c.source, name);
  return out.c_str();
}

}  // namespace retri
