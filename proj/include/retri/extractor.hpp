#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "retri/error.hpp"
#include "retri/featurepack.hpp"
#include "retri/manifest.hpp"
#include "retri/preprocess.hpp"
#include "retri/tensor.hpp"

#if defined(__unix__) || defined(__APPLE__)
#include <sys/wait.h>
#include <unistd.h>
#endif

namespace retri {

namespace backend {

/// Pre-extracted FPK1 file; must cover every manifest index.
struct PackFile {
  std::filesystem::path path;
};

/// External command; {input} and {output} are replaced by FPK1 paths.
struct Subprocess {
  std::string command;
};

/// Deterministic synthetic maps. Each value is u + label_signal * p, where u
/// comes from SplitMix64(seed ^ index) and p from SplitMix64(fnv1a(label)),
/// both uniform in [0, 1). label_signal = 0 gives pure noise.
struct Mock {
  std::uint64_t seed = 0;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  float label_signal = 0.0f;
};

}  // namespace backend

struct ExtractorSpec {
  std::variant<backend::PackFile, backend::Subprocess, backend::Mock> backend;
  std::string layer_tag = "pool5";
};

/// Loads the image behind a manifest record (used by the subprocess backend only).
using ImageLoader = std::function<RasterImage(const ImageRecord&)>;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline FeaturePack mock_maps(const DatasetManifest& manifest, const backend::Mock& mock, std::size_t views,
                             const std::string& layer_tag) {
  if (mock.channels == 0 || mock.height == 0 || mock.width == 0) {
    fail(ErrorCode::InvalidSpec, "mock backend dimensions must be >= 1");
  }
  FeaturePack p;
  p.kind = PackKind::Maps;
  p.layer_tag = layer_tag;
  p.views = views;
  p.shape = {manifest.size() * views, mock.channels, mock.height, mock.width};
  const std::size_t per_view = mock.channels * mock.height * mock.width;
  p.data.reserve(p.shape[0] * per_view);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    p.ids.push_back(static_cast<std::int64_t>(i));
    SplitMix64 noise(mock.seed ^ static_cast<std::uint64_t>(i));
    for (std::size_t v = 0; v < views; ++v) {
      if (mock.label_signal == 0.0f) {
        for (std::size_t e = 0; e < per_view; ++e) p.data.push_back(noise.uniform_float());
      } else {
        SplitMix64 proto(fnv1a64(manifest.records[i].label));
        for (std::size_t e = 0; e < per_view; ++e) {
          const float u = noise.uniform_float();
          p.data.push_back(u + mock.label_signal * proto.uniform_float());
        }
      }
    }
  }
  return p;
}

namespace detail {

inline void check_coverage(const FeaturePack& p, const DatasetManifest& manifest) {
  std::set<std::int64_t> have(p.ids.begin(), p.ids.end());
  std::vector<std::int64_t> missing;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (!have.count(static_cast<std::int64_t>(i))) missing.push_back(static_cast<std::int64_t>(i));
  }
  if (!missing.empty()) {
    std::string list;
    for (auto id : missing) list += (list.empty() ? "" : ",") + std::to_string(id);
    fail(ErrorCode::IdCoverageError, "feature pack is missing manifest ids {" + list + "}");
  }
}

/// Rows of `p` restricted to ids [0, n).
inline FeaturePack restrict_to_manifest(const FeaturePack& p, std::size_t n) {
  if (!p.ids.empty() && p.ids.back() < static_cast<std::int64_t>(n)) return p;
  FeaturePack out = p;
  out.ids.clear();
  out.data.clear();
  const std::size_t block = p.row_size() * p.views;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    if (p.ids[i] >= static_cast<std::int64_t>(n)) break;
    out.ids.push_back(p.ids[i]);
    out.data.insert(out.data.end(), p.data.begin() + static_cast<std::ptrdiff_t>(i * block),
                    p.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * block));
  }
  out.shape[0] = out.ids.size() * p.views;
  return out;
}

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

inline std::string shell_quote(const std::string& s) {
  return "'" + replace_all(s, "'", "'\\''") + "'";
}

inline FeaturePack run_subprocess(const DatasetManifest& manifest, const backend::Subprocess& sp,
                                  const TransformSpec& tspec, const ImageLoader& loader, const std::string& layer_tag) {
  if (!loader) fail(ErrorCode::BackendUnavailable, "subprocess backend needs an image loader");
  FeaturePack request;
  request.kind = PackKind::Maps;
  request.layer_tag = "input";
  request.views = view_count(tspec);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto views = apply_transform(loader(manifest.records[i]), tspec);
    for (const auto& v : views) {
      if (request.shape.empty()) request.shape = {0, 3, v.height, v.width};
      if (v.height != request.shape[2] || v.width != request.shape[3]) {
        fail(ErrorCode::ShapeMismatch, manifest.records[i].path + ": preprocessed size " +
                                           std::to_string(v.height) + "x" + std::to_string(v.width) +
                                           " differs from the first image; add a fixed-size resize or crop");
      }
      request.data.insert(request.data.end(), v.data.begin(), v.data.end());
    }
    request.ids.push_back(static_cast<std::int64_t>(i));
  }
  request.shape[0] = manifest.size() * request.views;

  static std::atomic<unsigned> counter{0};
  const auto tmp = std::filesystem::temp_directory_path();
  const std::string stem = "retri_" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const auto in_path = tmp / (stem + "_in.fpk");
  const auto out_path = tmp / (stem + "_out.fpk");
  write_pack(request, in_path);
  std::string cmd = replace_all(sp.command, "{input}", shell_quote(in_path.string()));
  cmd = replace_all(cmd, "{output}", shell_quote(out_path.string()));
  const int status = std::system(cmd.c_str());
  std::error_code ec;
  std::filesystem::remove(in_path, ec);
  if (status == -1) fail(ErrorCode::BackendUnavailable, "cannot launch shell for: " + sp.command);
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code == 127) fail(ErrorCode::BackendUnavailable, "command not found: " + sp.command);
  if (code != 0) {
    std::filesystem::remove(out_path, ec);
    fail(ErrorCode::SubprocessProtocolError, "extractor command exited with status " + std::to_string(code));
  }
  FeaturePack out;
  try {
    out = read_pack(out_path);
  } catch (const Error& e) {
    std::filesystem::remove(out_path, ec);
    fail(ErrorCode::SubprocessProtocolError, std::string("extractor output unreadable: ") + e.what());
  }
  std::filesystem::remove(out_path, ec);
  if (out.kind != PackKind::Maps || out.ids != request.ids || out.views != request.views) {
    fail(ErrorCode::SubprocessProtocolError,
         "extractor output must be a maps pack with the request's ids and view multiplicity");
  }
  out.layer_tag = layer_tag;
  return out;
}

}  // namespace detail

/// Feature maps for every manifest record, V consecutive rows per image in view
/// order. The pack records V in `views`.
inline FeaturePack extract(const DatasetManifest& manifest, const ExtractorSpec& spec, const TransformSpec& tspec,
                           const ImageLoader& loader = {}) {
  validate_transform_spec(tspec);
  const std::size_t views = view_count(tspec);
  if (const auto* mock = std::get_if<backend::Mock>(&spec.backend)) {
    return mock_maps(manifest, *mock, views, spec.layer_tag);
  }
  if (const auto* file = std::get_if<backend::PackFile>(&spec.backend)) {
    std::error_code ec;
    if (!std::filesystem::exists(file->path, ec)) {
      fail(ErrorCode::BackendUnavailable, "pack file not found: " + file->path.string());
    }
    FeaturePack p = read_pack(file->path);
    if (!spec.layer_tag.empty() && p.layer_tag != spec.layer_tag) {
      fail(ErrorCode::DataError, "pack layer_tag '" + p.layer_tag + "' does not match requested '" +
                                     spec.layer_tag + "'");
    }
    detail::check_coverage(p, manifest);
    return detail::restrict_to_manifest(p, manifest.size());
  }
  return detail::run_subprocess(manifest, std::get<backend::Subprocess>(spec.backend), tspec, loader,
                                spec.layer_tag);
}

}  // namespace retri
