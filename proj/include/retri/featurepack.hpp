#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retri/error.hpp"
#include "retri/manifest.hpp"
#include "retri/tensor.hpp"

namespace retri {

static_assert(std::endian::native == std::endian::little, "FPK1 I/O assumes a little-endian host");

enum class PackKind { Maps, Vectors };

inline std::string_view to_string(PackKind k) { return k == PackKind::Maps ? "maps" : "vectors"; }

/// Feature maps [N*V, C, H, W] or vectors [N, D] with their manifest ids.
///
/// `ids` holds one entry per image; a maps pack may carry V > 1 consecutive
/// rows per image (augmented views), so shape[0] == ids.size() * views.
struct FeaturePack {
  std::vector<std::int64_t> ids;
  std::string layer_tag;
  PackKind kind = PackKind::Vectors;
  std::vector<std::size_t> shape;
  std::size_t views = 1;
  std::vector<float> data;

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t row_size() const {
    return shape.size() < 2 ? 0
                            : std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1},
                                              std::multiplies<>());
  }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * row_size(), row_size()}; }

  MapView map(std::size_t r) const { return MapView{row(r), shape.at(1), shape.at(2), shape.at(3)}; }

  /// Copy of a vectors pack as a matrix.
  MatrixF matrix() const {
    if (kind != PackKind::Vectors) fail(ErrorCode::ShapeMismatch, "expected a vectors pack");
    return MatrixF(rows(), row_size(), data);
  }

  bool operator==(const FeaturePack&) const = default;
};

inline FeaturePack make_vectors_pack(std::vector<std::int64_t> ids, std::string layer_tag, const MatrixF& m) {
  FeaturePack p;
  p.ids = std::move(ids);
  p.layer_tag = std::move(layer_tag);
  p.kind = PackKind::Vectors;
  p.shape = {m.rows(), m.cols()};
  p.data = m.data();
  return p;
}

/// Structural invariants; non-finite values raise DataError with the flat index.
inline void validate_pack(const FeaturePack& p) {
  const std::size_t want_rank = p.kind == PackKind::Maps ? 4 : 2;
  if (p.shape.size() != want_rank) {
    fail(ErrorCode::FormatError, std::string(to_string(p.kind)) + " pack needs a rank-" +
                                     std::to_string(want_rank) + " shape");
  }
  for (std::size_t d = 1; d < p.shape.size(); ++d) {
    if (p.shape[d] == 0) fail(ErrorCode::FormatError, "shape dimension " + std::to_string(d) + " is zero");
  }
  if (p.views == 0 || (p.kind == PackKind::Vectors && p.views != 1)) {
    fail(ErrorCode::FormatError, "invalid view multiplicity " + std::to_string(p.views));
  }
  if (p.shape[0] != p.ids.size() * p.views) {
    fail(ErrorCode::FormatError, "shape[0]=" + std::to_string(p.shape[0]) + " does not match " +
                                     std::to_string(p.ids.size()) + " ids x " + std::to_string(p.views) +
                                     " views");
  }
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    if (p.ids[i] < 0 || (i > 0 && p.ids[i] <= p.ids[i - 1])) {
      fail(ErrorCode::FormatError, "ids must be non-negative and strictly increasing (at position " +
                                       std::to_string(i) + ")");
    }
  }
  const std::size_t expected = p.rows() * p.row_size();
  if (p.data.size() != expected) {
    fail(ErrorCode::FormatError, "payload holds " + std::to_string(p.data.size()) + " values, shape implies " +
                                     std::to_string(expected));
  }
  require_finite(p.data, "feature pack");
}

inline constexpr char kPackMagic[4] = {'F', 'P', 'K', '1'};

inline std::string pack_header(const FeaturePack& p) {
  nlohmann::ordered_json h;
  h["kind"] = to_string(p.kind);
  h["layer_tag"] = p.layer_tag;
  h["shape"] = p.shape;
  h["ids"] = p.ids;
  h["dtype"] = "f32";
  if (p.views != 1) h["views"] = p.views;
  return h.dump();
}

inline std::vector<char> encode_pack(const FeaturePack& p) {
  validate_pack(p);
  const std::string header = pack_header(p);
  const auto header_len = static_cast<std::uint32_t>(header.size());
  std::vector<char> out(8 + header.size() + p.data.size() * sizeof(float));
  std::memcpy(out.data(), kPackMagic, 4);
  std::memcpy(out.data() + 4, &header_len, 4);
  std::memcpy(out.data() + 8, header.data(), header.size());
  if (!p.data.empty()) std::memcpy(out.data() + 8 + header.size(), p.data.data(), p.data.size() * sizeof(float));
  return out;
}

inline FeaturePack decode_pack(std::span<const char> bytes, const std::string& origin = "<memory>") {
  auto bad = [&](const std::string& why) -> void { fail(ErrorCode::FormatError, origin + ": " + why); };
  if (bytes.size() < 8) bad("file too short for FPK1 preamble (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kPackMagic, 4) != 0) bad("bad magic, expected FPK1");
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, 4);
  if (bytes.size() < 8 + std::size_t{header_len}) {
    bad("truncated header: expected " + std::to_string(header_len) + " header bytes, have " +
        std::to_string(bytes.size() - 8));
  }
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    bad(std::string("header is not valid JSON: ") + e.what());
  }
  if (!h.is_object()) bad("header is not a JSON object");
  for (const auto& [key, _] : h.items()) {
    if (key != "kind" && key != "layer_tag" && key != "shape" && key != "ids" && key != "dtype" && key != "views") {
      bad("unknown header key '" + key + "'");
    }
  }
  FeaturePack p;
  try {
    const auto dtype = h.at("dtype").get<std::string>();
    if (dtype != "f32") bad("unsupported dtype '" + dtype + "' (only f32)");
    const auto kind = h.at("kind").get<std::string>();
    if (kind == "maps") {
      p.kind = PackKind::Maps;
    } else if (kind == "vectors") {
      p.kind = PackKind::Vectors;
    } else {
      bad("unknown kind '" + kind + "'");
    }
    p.layer_tag = h.at("layer_tag").get<std::string>();
    p.shape = h.at("shape").get<std::vector<std::size_t>>();
    p.ids = h.at("ids").get<std::vector<std::int64_t>>();
    if (h.contains("views")) p.views = h.at("views").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("malformed header field: ") + e.what());
  }
  if (p.shape.empty()) bad("empty shape");
  std::size_t count = 1;
  for (auto d : p.shape) count *= d;
  const std::size_t expected = count * sizeof(float);
  const std::size_t actual = bytes.size() - 8 - header_len;
  if (actual != expected) {
    bad("payload size mismatch: expected " + std::to_string(expected) + " bytes, got " + std::to_string(actual));
  }
  p.data.resize(count);
  if (count) std::memcpy(p.data.data(), bytes.data() + 8 + header_len, expected);
  try {
    validate_pack(p);
  } catch (const Error& e) {
    throw Error(e.code(), origin + ": " + e.what());
  }
  return p;
}

inline void write_pack(const FeaturePack& p, const std::filesystem::path& path) {
  const auto bytes = encode_pack(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

inline FeaturePack read_pack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pack(bytes, path.string());
}

/// Merge shards into one pack sorted by id.
inline FeaturePack concat_packs(std::span<const FeaturePack> packs) {
  if (packs.empty()) fail(ErrorCode::ShapeMismatch, "concat_packs needs at least one pack");
  const FeaturePack& first = packs.front();
  struct Slot {
    std::int64_t id;
    std::size_t pack;
    std::size_t image;
  };
  std::vector<Slot> slots;
  for (std::size_t k = 0; k < packs.size(); ++k) {
    const auto& p = packs[k];
    if (p.kind != first.kind || p.layer_tag != first.layer_tag || p.views != first.views ||
        !std::equal(p.shape.begin() + 1, p.shape.end(), first.shape.begin() + 1, first.shape.end())) {
      fail(ErrorCode::ShapeMismatch, "pack " + std::to_string(k) + " differs in kind, layer_tag, views or item shape");
    }
    for (std::size_t i = 0; i < p.ids.size(); ++i) slots.push_back({p.ids[i], k, i});
  }
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < slots.size(); ++i) {
    if (slots[i].id == slots[i - 1].id) fail(ErrorCode::DuplicateId, "id " + std::to_string(slots[i].id) + " appears in more than one pack");
  }
  FeaturePack out;
  out.kind = first.kind;
  out.layer_tag = first.layer_tag;
  out.views = first.views;
  out.shape = first.shape;
  out.shape[0] = slots.size() * first.views;
  const std::size_t block = first.row_size() * first.views;
  out.data.reserve(out.shape[0] * first.row_size());
  for (const auto& s : slots) {
    out.ids.push_back(s.id);
    const auto& src = packs[s.pack].data;
    out.data.insert(out.data.end(), src.begin() + static_cast<std::ptrdiff_t>(s.image * block),
                    src.begin() + static_cast<std::ptrdiff_t>((s.image + 1) * block));
  }
  return out;
}

}  // namespace retri
