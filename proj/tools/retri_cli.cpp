// retri: command-line driver for the retrieval pipeline.
//
//   retri manifest    --root DIR [--rule parent_dir|filename_prefix] --out FILE
//   retri extract     --config C --split query|gallery --out FILE.fpk
//   retri index       --config C --query Q.fpk --gallery G.fpk --out ranking.json
//   retri eval        --config C --ranking ranking.json --out report.json
//   retri export-topk --config C --ranking ranking.json --k N --out topk.json
//   retri run         --config C --out-dir DIR
//   retri search      --config C --out-dir DIR
//   retri csv         --results results.json --out results.csv
//   retri filter      --results results.json [--keyword K ...] [--out FILE]

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "retri/retri.hpp"

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t workers = 1;
  bool verbose = false;
};

Globals g;

void log(const std::string& msg) {
  if (g.verbose) std::cerr << "[retri] " << msg << "\n";
}

class Timer {
 public:
  explicit Timer(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    log(what_ + " took " + std::to_string(ms) + " ms");
  }

 private:
  std::string what_;
  std::chrono::steady_clock::time_point start_;
};

retri::PipelineConfig config() {
  if (g.config.empty()) retri::fail(retri::ErrorCode::ConfigError, "--config is required");
  return retri::load_config(g.config, g.overrides);
}

/// Decodes images with OpenCV into RGB floats in [0, 1].
retri::ImageLoader image_loader(const std::filesystem::path& root) {
  return [root](const retri::ImageRecord& rec) {
    const auto path = root / rec.path;
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) retri::fail(retri::ErrorCode::IoError, "cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    retri::RasterImage img(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols));
    for (int i = 0; i < rgb.rows; ++i) {
      const auto* row = rgb.ptr<cv::Vec3b>(i);
      for (int j = 0; j < rgb.cols; ++j)
        for (int c = 0; c < 3; ++c) {
          img.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(c)) =
              static_cast<float>(row[j][c]) / 255.0f;
        }
    }
    return img;
  };
}

retri::Split parse_split(const std::string& s) {
  if (s == "query") return retri::Split::Query;
  if (s == "gallery") return retri::Split::Gallery;
  retri::fail(retri::ErrorCode::ConfigError, "--split must be query or gallery, got '" + s + "'");
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  retri::detail::write_text_file(path, j.dump(2) + "\n");
}

retri::RankingResult read_ranking(const std::filesystem::path& path) {
  return retri::ranking_from_json(retri::detail::parse_json_text(retri::detail::read_text_file(path), path.string()));
}

void print_report(const retri::EvalReport& r) {
  std::printf("mAP %.4f", r.map);
  for (const auto& [k, v] : r.recall_at) std::printf("  R@%zu %.4f", k, v);
  std::printf("  (%zu/%zu queries)\n", r.num_valid_queries, r.num_queries);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised content-based image retrieval pipeline"};
  app.require_subcommand(1);
  app.add_option("--config", g.config, "Pipeline config file");
  app.add_option("--override", g.overrides, "KEY=VALUE with a dotted key; repeatable")->take_all();
  app.add_option("--workers", g.workers, "Parallel search workers")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "Log stage timings to stderr");

  std::string root, rule = "parent_dir", out, out_dir, split, query, gallery, ranking, results, save_transform;
  std::size_t k = 10;
  std::vector<std::string> keywords;
  std::function<void()> action;

  auto* manifest = app.add_subcommand("manifest", "Build a dataset manifest from a directory of images");
  manifest->add_option("--root", root, "Image directory")->required();
  manifest->add_option("--rule", rule, "Label rule")->check(CLI::IsMember({"parent_dir", "filename_prefix"}));
  manifest->add_option("--out", out, "Output manifest JSON")->required();
  manifest->callback([&] {
    action = [&] {
      const auto m = retri::build_manifest(
          root, rule == "parent_dir" ? retri::LabelRule::ParentDir : retri::LabelRule::FilenamePrefix);
      retri::save_manifest(m, out);
      log("wrote " + std::to_string(m.size()) + " records");
    };
  });

  auto* extract = app.add_subcommand("extract", "Extract feature maps for one split");
  extract->add_option("--split", split, "query or gallery")->required();
  extract->add_option("--out", out, "Output feature pack")->required();
  extract->callback([&] {
    action = [&] {
      const auto c = config();
      const auto which = parse_split(split);
      const auto m = retri::load_manifest(which == retri::Split::Query ? c.data.query_manifest : c.data.gallery_manifest);
      Timer t("extract");
      retri::write_pack(retri::extract_split(c, which, m, image_loader(c.data.image_root)), out);
    };
  });

  auto* index = app.add_subcommand("index", "Aggregate, transform, index and re-rank two packs");
  index->add_option("--query", query, "Query feature pack")->required();
  index->add_option("--gallery", gallery, "Gallery feature pack")->required();
  index->add_option("--out", out, "Output ranking JSON")->required();
  index->add_option("--save-transform", save_transform, "Also write the fitted transform");
  index->callback([&] {
    action = [&] {
      const auto c = config();
      const auto q = retri::read_pack(query), gpack = retri::read_pack(gallery);
      Timer t("index");
      const auto d = retri::describe(c, q, gpack);
      if (!save_transform.empty()) retri::save_fitted_transform(d.transform, save_transform);
      write_json(out, retri::ranking_to_json(retri::enhance_and_rank(c, d.query, d.gallery)));
    };
  });

  auto* eval = app.add_subcommand("eval", "Score a ranking against the manifests");
  eval->add_option("--ranking", ranking, "Ranking JSON")->required();
  eval->add_option("--out", out, "Output report JSON")->required();
  eval->callback([&] {
    action = [&] {
      const auto c = config();
      const auto report = retri::evaluate_ranking(c, read_ranking(ranking), retri::load_manifests(c));
      write_json(out, retri::report_to_json(report));
      print_report(report);
    };
  });

  auto* topk = app.add_subcommand("export-topk", "Write the top-k results of each query");
  topk->add_option("--ranking", ranking, "Ranking JSON")->required();
  topk->add_option("--k", k, "Results per query")->check(CLI::PositiveNumber);
  topk->add_option("--out", out, "Output JSON")->required();
  topk->callback([&] {
    action = [&] {
      const auto c = config();
      const auto m = retri::load_manifests(c);
      retri::export_topk(read_ranking(ranking), m.query, m.gallery, k, c.eval.protocol, out);
    };
  });

  auto* run = app.add_subcommand("run", "Run the whole pipeline once");
  run->add_option("--out-dir", out_dir, "Directory for ranking.json and report.json")->required();
  run->callback([&] {
    action = [&] {
      const auto c = config();
      retri::PipelineResult r;
      {
        Timer t("pipeline");
        r = retri::run_pipeline(c, image_loader(c.data.image_root));
      }
      std::filesystem::create_directories(out_dir);
      write_json(std::filesystem::path(out_dir) / "ranking.json", retri::ranking_to_json(r.ranking));
      write_json(std::filesystem::path(out_dir) / "report.json", retri::report_to_json(r.report));
      print_report(r.report);
    };
  });

  auto* search = app.add_subcommand("search", "Run every config of the search space");
  search->add_option("--out-dir", out_dir, "Directory for results.json and results.csv")->required();
  search->callback([&] {
    action = [&] {
      const auto c = config();
      const auto space = retri::parse_search_space(c);
      if (space.axes.empty()) retri::fail(retri::ErrorCode::ConfigError, "search.axes: no search space defined");
      retri::SearchOptions opts;
      opts.workers = g.workers;
      opts.loader = image_loader(c.data.image_root);
      opts.on_row = [](const retri::SearchRow& row) {
        log(row.config + (row.error ? " failed: " + *row.error : " mAP " + std::to_string(*row.map)));
      };
      const auto outcome = retri::run_search(c, space, out_dir, opts);
      std::vector<std::string> stages;
      for (const auto& a : space.axes) stages.push_back(a.stage);
      retri::to_csv(outcome.rows, std::filesystem::path(out_dir) / "results.csv", stages);
      std::printf("%zu configs, %zu executed\n", outcome.rows.size(), outcome.executed.size());
      for (const auto& row : retri::top_rows(outcome.rows, 3)) {
        if (row.map) std::printf("  %.4f  %s\n", *row.map, row.config.c_str());
      }
    };
  });

  auto* csv = app.add_subcommand("csv", "Convert a results file to CSV");
  csv->add_option("--results", results, "results.json")->required();
  csv->add_option("--out", out, "Output CSV")->required();
  csv->callback([&] { action = [&] { retri::to_csv(retri::load_results(results), out); }; });

  auto* filter = app.add_subcommand("filter", "Keep rows whose candidate names contain every keyword");
  filter->add_option("--results", results, "results.json")->required();
  filter->add_option("--keyword", keywords, "Case-insensitive substring; repeatable")->take_all();
  filter->add_option("--out", out, "Output CSV (default: stdout)");
  filter->callback([&] {
    action = [&] {
      const auto rows = retri::filter_rows(retri::load_results(results), keywords);
      if (out.empty()) {
        std::cout << retri::rows_to_csv(rows);
      } else {
        retri::to_csv(rows, out);
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    action();
  } catch (const retri::Error& e) {
    std::cerr << "error: " << e.describe() << "\n";
    return retri::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
