#pragma once

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>
#include <string>

#include <gtest/gtest.h>

#include "retri/error.hpp"
#include "retri/tensor.hpp"

#define EXPECT_RETRI_ERROR(stmt, expected_code)                                    \
  do {                                                                             \
    try {                                                                          \
      stmt;                                                                        \
      ADD_FAILURE() << "expected " << retri::to_string(expected_code);             \
    } catch (const retri::Error& e) {                                              \
      EXPECT_EQ(retri::to_string(e.code()), retri::to_string(expected_code))       \
          << e.what();                                                             \
    }                                                                              \
  } while (0)

namespace retri::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("retri_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline void touch(const std::filesystem::path& p, const std::string& content = "x") {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << content;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random matrix with entries uniform in [lo, hi).
inline MatrixF random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, float lo = 0.0f, float hi = 1.0f) {
  MatrixF m(rows, cols);
  for (auto& x : m.data()) x = lo + (hi - lo) * rng.uniform_float();
  return m;
}

}  // namespace retri::testing
