#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "retri/config.hpp"
#include "retri/error.hpp"
#include "retri/pipeline.hpp"

namespace retri {

inline const std::vector<std::string>& search_stages() {
  static const std::vector<std::string> stages{"preprocess", "extract", "aggregate", "transform",
                                               "enhance",    "rerank",  "eval"};
  return stages;
}

struct SearchCandidate {
  std::string name;
  YAML::Node section;
};

struct SearchAxis {
  std::string stage;
  std::vector<SearchCandidate> candidates;
};

struct SearchSpace {
  std::vector<SearchAxis> axes;

  std::size_t size() const {
    std::size_t n = axes.empty() ? 0 : 1;
    for (const auto& a : axes) n *= a.candidates.size();
    return n;
  }
};

namespace detail {

inline std::vector<std::string> split_plus(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t p; (p = s.find('+', start)) != std::string::npos; start = p + 1) out.push_back(s.substr(start, p - start));
  out.push_back(s.substr(start));
  return out;
}

/// Section for a bare candidate name: an aggregation method, a "+"-joined
/// transform chain or a "+"-joined preprocessing chain.
inline YAML::Node shorthand_section(const std::string& stage, const std::string& name, const std::string& path) {
  YAML::Node n(YAML::NodeType::Map);
  if (stage == "aggregate") {
    n["method"] = name;
  } else if (stage == "transform" || stage == "preprocess") {
    YAML::Node list(YAML::NodeType::Sequence);
    if (name != "none") {
      for (const auto& part : split_plus(name)) list.push_back(part);
    }
    n[stage == "transform" ? "steps" : "ops"] = list;
  } else if (name != "none") {
    config_fail(path, "bare candidate names are only allowed for preprocess, aggregate and transform");
  }
  return n;
}

}  // namespace detail

/// Reads `search.axes`: each stage maps to either {name: section} or a list of
/// bare names (see shorthand_section). Axis order is document order.
inline SearchSpace parse_search_space(const YAML::Node& axes) {
  SearchSpace s;
  if (!axes || axes.IsNull()) return s;
  detail::require_map(axes, "search.axes");
  for (const auto& kv : axes) {
    const auto stage = kv.first.as<std::string>();
    const std::string path = "search.axes." + stage;
    if (std::find(search_stages().begin(), search_stages().end(), stage) == search_stages().end()) {
      detail::config_fail(path, "unknown stage");
    }
    for (const auto& a : s.axes) {
      if (a.stage == stage) detail::config_fail(path, "duplicate axis");
    }
    SearchAxis axis{stage, {}};
    const YAML::Node& list = kv.second;
    if (list.IsMap()) {
      for (const auto& c : list) {
        YAML::Node section = c.second.IsNull() ? YAML::Node(YAML::NodeType::Map) : YAML::Clone(c.second);
        axis.candidates.push_back({c.first.as<std::string>(), section});
      }
    } else if (list.IsSequence()) {
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto name = detail::scalar<std::string>(list[i], path + "[" + std::to_string(i) + "]");
        axis.candidates.push_back({name, detail::shorthand_section(stage, name, path)});
      }
    } else if (!list.IsNull()) {
      detail::config_fail(path, "expected a list or mapping of candidates");
    }
    if (axis.candidates.empty()) fail(ErrorCode::EmptyAxis, "search axis '" + stage + "' has no candidates");
    std::set<std::string> names;
    for (const auto& c : axis.candidates) {
      if (!names.insert(c.name).second) detail::config_fail(path, "duplicate candidate name '" + c.name + "'");
    }
    s.axes.push_back(std::move(axis));
  }
  return s;
}

inline SearchSpace parse_search_space(const PipelineConfig& c) {
  const YAML::Node search = c.source["search"];
  return parse_search_space(search ? search["axes"] : YAML::Node());
}

struct SearchCase {
  std::vector<std::string> names;  // one per axis
  PipelineConfig config;
};

/// "stage=name" pairs joined by ";", the identity used for resume matching.
inline std::string case_name(const SearchSpace& s, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ";" : "") + s.axes[i].stage + "=" + names[i];
  return out;
}

/// Cartesian product in axis order, candidates in declaration order (last axis fastest).
inline std::vector<SearchCase> enumerate_space(const PipelineConfig& base, const SearchSpace& s) {
  for (const auto& a : s.axes) {
    if (a.candidates.empty()) fail(ErrorCode::EmptyAxis, "search axis '" + a.stage + "' has no candidates");
  }
  std::vector<SearchCase> out;
  if (s.axes.empty()) return out;
  std::vector<std::size_t> pick(s.axes.size(), 0);
  while (true) {
    YAML::Node doc = YAML::Clone(base.source);
    doc.remove("search");
    SearchCase sc;
    for (std::size_t i = 0; i < s.axes.size(); ++i) {
      const auto& cand = s.axes[i].candidates[pick[i]];
      doc[s.axes[i].stage] = YAML::Clone(cand.section);
      sc.names.push_back(cand.name);
    }
    try {
      sc.config = parse_config(doc, base.base_dir);
    } catch (const Error& e) {
      fail(e.code(), "candidate " + case_name(s, sc.names) + ": " + e.what());
    }
    out.push_back(std::move(sc));
    std::size_t axis = s.axes.size();
    while (axis > 0) {
      --axis;
      if (++pick[axis] < s.axes[axis].candidates.size()) break;
      pick[axis] = 0;
      if (axis == 0) return out;
    }
  }
}

struct SearchRow {
  std::string config;
  std::vector<std::string> stages;
  std::vector<std::string> names;
  std::optional<double> map;
  std::map<std::size_t, double> recall_at;
  double wall_time_ms = 0.0;
  std::optional<std::string> error;
};

inline nlohmann::ordered_json row_to_json(const SearchRow& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;
  nlohmann::ordered_json names = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.stages.size(); ++i) names[r.stages[i]] = r.names[i];
  j["candidates"] = std::move(names);
  if (r.map) j["map"] = *r.map;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
  j["recall_at"] = std::move(recall);
  j["wall_time_ms"] = r.wall_time_ms;
  if (r.error) j["error"] = *r.error;
  return j;
}

inline SearchRow row_from_json(const nlohmann::ordered_json& j) {
  SearchRow r;
  try {
    r.config = j.at("config").get<std::string>();
    for (const auto& [stage, name] : j.at("candidates").items()) {
      r.stages.push_back(stage);
      r.names.push_back(name.get<std::string>());
    }
    if (j.contains("map")) r.map = j.at("map").get<double>();
    for (const auto& [k, v] : j.at("recall_at").items()) r.recall_at[std::stoul(k)] = v.get<double>();
    r.wall_time_ms = j.at("wall_time_ms").get<double>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
  } catch (const std::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed search row: ") + e.what());
  }
  return r;
}

inline std::vector<SearchRow> load_results(const std::filesystem::path& path) {
  // ordered parse keeps the candidate columns in axis order
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(detail::read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  if (!j.is_array()) fail(ErrorCode::FormatError, path.string() + ": results must be a JSON array");
  std::vector<SearchRow> rows;
  for (const auto& item : j) rows.push_back(row_from_json(item));
  return rows;
}

inline void save_results(const std::vector<SearchRow>& rows, const std::filesystem::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back(row_to_json(r));
  // write-then-rename keeps the previous file intact if the process dies mid-write
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  detail::write_text_file(tmp, j.dump(2) + "\n");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot replace " + path.string() + ": " + ec.message());
}

namespace detail {

/// Write-once store: the first caller computes, concurrent callers wait on the same result.
template <typename V>
class OnceCache {
 public:
  V get(const std::string& key, const std::function<V()>& make) {
    std::shared_future<V> fut;
    std::promise<V> promise;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = slots_.find(key);
      if (it == slots_.end()) {
        fut = promise.get_future().share();
        slots_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(make());
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return slots_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<V>> slots_;
};

}  // namespace detail

struct SearchOptions {
  std::size_t workers = 1;
  ImageLoader loader;
  /// Called after each executed row, in completion order.
  std::function<void(const SearchRow&)> on_row;
};

struct SearchOutcome {
  std::vector<SearchRow> rows;          // enumeration order
  std::vector<std::string> executed;    // configs run in this call, in enumeration order
};

/// Runs every enumerated config, writing `results.json` under out_dir after each
/// row. Rows already present (by config name) are reused instead of re-run.
inline SearchOutcome run_search(const PipelineConfig& base, const SearchSpace& space, const std::filesystem::path& out_dir,
                                const SearchOptions& opts = {}) {
  const auto cases = enumerate_space(base, space);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto results_path = out_dir / "results.json";

  std::map<std::string, SearchRow> previous;
  if (std::filesystem::exists(results_path)) {
    for (auto& r : load_results(results_path)) previous.emplace(r.config, std::move(r));
  }

  std::vector<std::string> stages;
  for (const auto& a : space.axes) stages.push_back(a.stage);

  std::vector<std::optional<SearchRow>> done(cases.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto name = case_name(space, cases[i].names);
    auto it = previous.find(name);
    if (it != previous.end()) {
      done[i] = it->second;
    } else {
      todo.push_back(i);
    }
  }

  const Manifests manifests = load_manifests(base);
  detail::OnceCache<FeaturePack> packs;
  detail::OnceCache<std::shared_ptr<const Descriptors>> descriptors;
  std::mutex writer;

  auto run_case = [&](std::size_t i) {
    const SearchCase& sc = cases[i];
    const PipelineConfig& c = sc.config;
    SearchRow row;
    row.config = case_name(space, sc.names);
    row.stages = stages;
    row.names = sc.names;
    const auto start = std::chrono::steady_clock::now();
    try {
      const std::string upstream = section_key(c, "extract") + "|" + section_key(c, "preprocess");
      auto pack = [&](Split split) {
        return packs.get(std::string(to_string(split)) + "|" + upstream, [&] {
          return extract_split(c, split, split == Split::Query ? manifests.query : manifests.gallery, opts.loader);
        });
      };
      const auto desc = descriptors.get(
          upstream + "|" + section_key(c, "aggregate") + "|" + section_key(c, "transform"),
          [&] { return std::make_shared<const Descriptors>(describe(c, pack(Split::Query), pack(Split::Gallery))); });
      const RankingResult ranking = enhance_and_rank(c, desc->query, desc->gallery);
      const EvalReport report = evaluate_ranking(c, ranking, manifests);
      row.map = report.map;
      row.recall_at = report.recall_at;
    } catch (const Error& e) {
      row.error = e.describe();
    }
    row.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    std::lock_guard lock(writer);
    done[i] = row;
    std::vector<SearchRow> snapshot;
    for (const auto& r : done) {
      if (r) snapshot.push_back(*r);
    }
    save_results(snapshot, results_path);
    if (opts.on_row) opts.on_row(row);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, todo.size()));
  if (workers <= 1) {
    for (std::size_t i : todo) run_case(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t; (t = next.fetch_add(1)) < todo.size();) run_case(todo[t]);
      });
    }
    for (auto& t : pool) t.join();
  }
  if (todo.empty()) {
    std::vector<SearchRow> snapshot;
    for (const auto& r : done) snapshot.push_back(*r);
    save_results(snapshot, results_path);
  }

  SearchOutcome out;
  for (auto& r : done) out.rows.push_back(std::move(*r));
  for (std::size_t i : todo) out.executed.push_back(out.rows[i].config);
  return out;
}

/// Rows with the highest mAP first; failed rows last. Ties keep enumeration order.
inline std::vector<SearchRow> top_rows(std::vector<SearchRow> rows, std::size_t n) {
  std::stable_sort(rows.begin(), rows.end(), [](const SearchRow& a, const SearchRow& b) {
    return a.map.value_or(-1.0) > b.map.value_or(-1.0);
  });
  if (rows.size() > n) rows.resize(n);
  return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string fixed4(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace detail

/// Header: stage columns, "map", "recall@k"..., "wall_time_ms", "error".
inline std::string rows_to_csv(const std::vector<SearchRow>& rows, const std::vector<std::string>& stages = {}) {
  std::vector<std::string> cols = rows.empty() ? stages : rows.front().stages;
  std::set<std::size_t> ks;
  for (const auto& r : rows) {
    if (r.stages != cols) fail(ErrorCode::ShapeMismatch, "search rows do not share a column schema");
    for (const auto& [k, _] : r.recall_at) ks.insert(k);
  }
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + detail::csv_field(fields[i]);
    out += "\r\n";
  };
  std::vector<std::string> header = cols;
  header.push_back("map");
  for (auto k : ks) header.push_back("recall@" + std::to_string(k));
  header.push_back("wall_time_ms");
  header.push_back("error");
  line(header);
  for (const auto& r : rows) {
    std::vector<std::string> f = r.names;
    f.push_back(r.map ? detail::fixed4(*r.map) : "");
    for (auto k : ks) {
      auto it = r.recall_at.find(k);
      f.push_back(it == r.recall_at.end() ? "" : detail::fixed4(it->second));
    }
    f.push_back(detail::fixed4(r.wall_time_ms));
    f.push_back(r.error.value_or(""));
    line(f);
  }
  return out;
}

inline void to_csv(const std::vector<SearchRow>& rows, const std::filesystem::path& path,
                   const std::vector<std::string>& stages = {}) {
  detail::write_text_file(path, rows_to_csv(rows, stages));
}

/// RFC-4180 records; accepts CRLF or LF line ends.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      rec.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      rec.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(rec));
      rec.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) fail(ErrorCode::FormatError, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    rec.push_back(std::move(field));
    records.push_back(std::move(rec));
  }
  return records;
}

/// Inverse of rows_to_csv; metrics come back rounded to 4 decimals.
inline std::vector<SearchRow> rows_from_csv(const std::string& text) {
  const auto records = parse_csv(text);
  if (records.empty()) fail(ErrorCode::FormatError, "CSV has no header");
  const auto& header = records.front();
  const auto map_col = std::find(header.begin(), header.end(), "map");
  if (map_col == header.end()) fail(ErrorCode::FormatError, "CSV header lacks a map column");
  const std::size_t n_stages = static_cast<std::size_t>(map_col - header.begin());
  std::vector<std::string> stages(header.begin(), map_col);
  std::vector<SearchRow> rows;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r];
    if (f.size() != header.size()) fail(ErrorCode::FormatError, "CSV line " + std::to_string(r + 1) + " has wrong width");
    SearchRow row;
    row.stages = stages;
    row.names.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(n_stages));
    for (std::size_t i = 0; i < n_stages; ++i) row.config += (i ? ";" : "") + stages[i] + "=" + row.names[i];
    for (std::size_t c = n_stages; c < header.size(); ++c) {
      const std::string& h = header[c];
      if (h == "error") {
        if (!f[c].empty()) row.error = f[c];
      } else if (f[c].empty()) {
        continue;
      } else if (h == "map") {
        row.map = std::stod(f[c]);
      } else if (h == "wall_time_ms") {
        row.wall_time_ms = std::stod(f[c]);
      } else if (h.rfind("recall@", 0) == 0) {
        row.recall_at[std::stoul(h.substr(7))] = std::stod(f[c]);
      } else {
        fail(ErrorCode::FormatError, "unknown CSV column '" + h + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Rows where every keyword occurs (case-insensitively) in some candidate name.
inline std::vector<SearchRow> filter_rows(const std::vector<SearchRow>& rows, const std::vector<std::string>& keywords) {
  std::vector<SearchRow> out;
  for (const auto& r : rows) {
    bool keep = true;
    for (const auto& kw : keywords) {
      const auto needle = detail::lower(kw);
      keep = std::any_of(r.names.begin(), r.names.end(),
                         [&](const std::string& n) { return detail::lower(n).find(needle) != std::string::npos; });
      if (!keep) break;
    }
    if (keep) out.push_back(r);
  }
  return out;
}

}  // namespace retri
