#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retri/error.hpp"

namespace retri {

struct ImageRecord {
  std::string path;
  std::string label;
  std::optional<std::uint32_t> camera_id;
  bool is_junk = false;

  bool operator==(const ImageRecord&) const = default;
};

/// Ordered image list; record position is the manifest index used by every stage.
struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::vector<ImageRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool has_cameras() const noexcept { return !records.empty() && records.front().camera_id.has_value(); }

  bool operator==(const DatasetManifest&) const = default;
};

enum class LabelRule { ParentDir, FilenamePrefix };

/// Throws FormatError naming the first violated invariant.
inline void validate_manifest(const DatasetManifest& m) {
  if (m.version != DatasetManifest::kVersion) {
    fail(ErrorCode::VersionError, "unsupported manifest version " + std::to_string(m.version));
  }
  std::set<std::string> seen;
  bool any_real = false;
  const bool cameras = m.has_cameras();
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const std::string where = "records[" + std::to_string(i) + "]";
    if (r.path.empty()) fail(ErrorCode::FormatError, where + ".path: empty path");
    if (!seen.insert(r.path).second) {
      fail(ErrorCode::FormatError, where + ".path: duplicate path '" + r.path + "'");
    }
    if (r.camera_id.has_value() != cameras) {
      fail(ErrorCode::FormatError,
           where + ".camera_id: camera_id must be present on all records or on none");
    }
    any_real = any_real || !r.is_junk;
  }
  if (!any_real) fail(ErrorCode::FormatError, "records: manifest has no non-junk record");
}

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp";
}

/// Camera from the first '_'-separated token of the form c<digits>...
inline std::optional<std::uint32_t> parse_camera_token(const std::string& stem) {
  std::stringstream ss(stem);
  std::string token;
  bool first = true;
  while (std::getline(ss, token, '_')) {
    if (first) {
      first = false;
      continue;
    }
    if (token.size() >= 2 && token[0] == 'c' && std::isdigit(static_cast<unsigned char>(token[1]))) {
      std::uint32_t value = 0;
      for (std::size_t i = 1; i < token.size() && std::isdigit(static_cast<unsigned char>(token[i])); ++i) {
        value = value * 10 + static_cast<std::uint32_t>(token[i] - '0');
      }
      return value;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Scan root_dir recursively for jpg/jpeg/png/bmp files. Records are sorted by
/// relative path. Under FilenamePrefix the label is the filename up to the first
/// '_' and cameras come from a "c<k>" token; cameras are kept only when every
/// file carries one.
inline DatasetManifest build_manifest(const std::filesystem::path& root_dir, LabelRule rule) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root_dir, ec)) {
    fail(ErrorCode::EmptyDataset, "not a directory: " + root_dir.string());
  }
  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(root_dir, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (it->is_regular_file() && detail::is_image_file(it->path())) files.push_back(it->path());
  }
  if (ec) fail(ErrorCode::IoError, "cannot scan " + root_dir.string() + ": " + ec.message());
  if (files.empty()) fail(ErrorCode::EmptyDataset, "no image files under " + root_dir.string());

  DatasetManifest m;
  bool all_cameras = true;
  for (const auto& file : files) {
    const fs::path rel = file.lexically_relative(root_dir);
    ImageRecord r;
    r.path = rel.generic_string();
    if (rule == LabelRule::ParentDir) {
      r.label = rel.parent_path().filename().string();
      if (r.label.empty()) fail(ErrorCode::AmbiguousLabel, r.path + ": file has no parent directory label");
    } else {
      const std::string stem = file.stem().string();
      r.label = stem.substr(0, stem.find('_'));
      if (r.label.empty()) fail(ErrorCode::AmbiguousLabel, r.path + ": empty filename prefix");
      r.camera_id = detail::parse_camera_token(stem);
    }
    all_cameras = all_cameras && r.camera_id.has_value();
    m.records.push_back(std::move(r));
  }
  if (!all_cameras) {
    for (auto& r : m.records) r.camera_id.reset();
  }
  std::sort(m.records.begin(), m.records.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; });
  validate_manifest(m);
  return m;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["path"] = r.path;
    j["label"] = r.label;
    if (r.camera_id) j["camera_id"] = *r.camera_id;
    j["is_junk"] = r.is_junk;
    records.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["version"] = m.version;
  out["records"] = std::move(records);
  return out;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& field, const std::string& why) -> void {
    fail(ErrorCode::FormatError, field + ": " + why);
  };
  if (!j.is_object()) bad("<root>", "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "version" && key != "records") bad(key, "unknown key");
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) bad("version", "missing or not an integer");
  DatasetManifest m;
  m.version = j["version"].get<int>();
  if (m.version != DatasetManifest::kVersion) {
    fail(ErrorCode::VersionError, "unsupported manifest version " + std::to_string(m.version));
  }
  if (!j.contains("records") || !j["records"].is_array()) bad("records", "missing or not an array");
  const auto& arr = j["records"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& jr = arr[i];
    const std::string where = "records[" + std::to_string(i) + "]";
    if (!jr.is_object()) bad(where, "expected an object");
    for (const auto& [key, _] : jr.items()) {
      if (key != "path" && key != "label" && key != "camera_id" && key != "is_junk") {
        bad(where + "." + key, "unknown key");
      }
    }
    ImageRecord r;
    if (!jr.contains("path") || !jr["path"].is_string()) bad(where + ".path", "missing or not a string");
    if (!jr.contains("label") || !jr["label"].is_string()) bad(where + ".label", "missing or not a string");
    r.path = jr["path"].get<std::string>();
    r.label = jr["label"].get<std::string>();
    if (jr.contains("camera_id")) {
      const auto& c = jr["camera_id"];
      if (!c.is_number_unsigned()) bad(where + ".camera_id", "expected a non-negative integer");
      r.camera_id = c.get<std::uint32_t>();
    }
    if (jr.contains("is_junk")) {
      if (!jr["is_junk"].is_boolean()) bad(where + ".is_junk", "expected a boolean");
      r.is_junk = jr["is_junk"].get<bool>();
    }
    m.records.push_back(std::move(r));
  }
  validate_manifest(m);
  return m;
}

/// Pretty-printed JSON, two-space indent, LF line endings, trailing newline.
inline std::string manifest_to_string(const DatasetManifest& m) {
  return manifest_to_json(m).dump(2) + "\n";
}

namespace detail {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

/// Parse JSON text; syntax errors become FormatError with a line number.
inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    fail(ErrorCode::FormatError, origin + ":" + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace detail

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate_manifest(m);
  detail::write_text_file(path, manifest_to_string(m));
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::string text = detail::read_text_file(path);
  try {
    return manifest_from_json(detail::parse_json_text(text, path.string()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::FormatError && std::string_view(e.what()).find(path.string()) == std::string_view::npos) {
      throw Error(e.code(), path.string() + ": " + e.what());
    }
    throw;
  }
}

}  // namespace retri
