// Runs the pipeline described by a config file and prints the scores.
//
//   quickstart fixtures/synthetic/config.yaml [KEY=VALUE ...]

#include <cstdio>
#include <string>
#include <vector>

#include "retri/retri.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s CONFIG [KEY=VALUE ...]\n", argv[0]);
    return 2;
  }
  const std::vector<std::string> overrides(argv + 2, argv + argc);
  try {
    const auto config = retri::load_config(argv[1], overrides);
    const auto result = retri::run_pipeline(config);
    std::printf("mAP %.4f\n", result.report.map);
    for (const auto& [k, v] : result.report.recall_at) std::printf("R@%zu %.4f\n", k, v);
  } catch (const retri::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.describe().c_str());
    return retri::exit_code_for(e.code());
  }
  return 0;
}
