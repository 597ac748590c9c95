#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "retri/error.hpp"
#include "retri/featurepack.hpp"
#include "retri/tensor.hpp"

namespace retri {

namespace step {
struct L2N {
  bool operator==(const L2N&) const = default;
};
enum class ProjectionKind { PCA, SVD };
/// PCA centers the data; SVD projects the raw matrix.
struct Projection {
  ProjectionKind kind = ProjectionKind::PCA;
  std::size_t dim = 512;
  bool whiten = false;
  bool operator==(const Projection&) const = default;
};
}  // namespace step

using TransformStep = std::variant<step::L2N, step::Projection>;

struct TransformChainSpec {
  std::vector<TransformStep> steps;
  bool operator==(const TransformChainSpec&) const = default;
};

inline std::string step_name(const TransformStep& s) {
  if (std::holds_alternative<step::L2N>(s)) return "L2N";
  const auto& p = std::get<step::Projection>(s);
  return std::string(p.kind == step::ProjectionKind::PCA ? "PCA" : "SVD") + (p.whiten ? "_w" : "") + "(" +
         std::to_string(p.dim) + ")";
}

inline void validate_chain_spec(const TransformChainSpec& spec) {
  std::size_t projections = 0;
  for (const auto& s : spec.steps) {
    if (const auto* p = std::get_if<step::Projection>(&s)) {
      ++projections;
      if (p->dim < 1) fail(ErrorCode::InvalidSpec, "projection dim must be >= 1");
    }
  }
  if (projections > 1) fail(ErrorCode::InvalidSpec, "at most one PCA/SVD step per transform chain");
}

/// Learned parameters of the chain's projection step (if any).
struct FittedProjection {
  step::Projection spec;
  std::size_t input_dim = 0;
  std::vector<double> mean;        // input_dim; zeros for SVD
  Matrix<double> projection;       // [dim, input_dim], orthonormal rows
  std::vector<double> scale;       // [dim]; ones without whitening

  bool operator==(const FittedProjection&) const = default;
};

struct FittedTransform {
  TransformChainSpec spec;
  std::size_t input_dim = 0;
  std::optional<FittedProjection> projection;

  std::size_t output_dim() const { return projection ? projection->spec.dim : input_dim; }
  bool operator==(const FittedTransform&) const = default;
};

namespace detail {

/// Flip each row so its largest-magnitude entry (first on ties) is positive.
inline void fix_row_signs(Matrix<double>& rows) {
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (std::abs(row[c]) > std::abs(row[arg])) arg = c;
    }
    if (row[arg] < 0.0) {
      for (double& x : row) x = -x;
    }
  }
}

inline FittedProjection fit_projection(const step::Projection& spec, const Matrix<double>& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) fail(ErrorCode::NotEnoughSamples, "projection fit needs at least 2 gallery vectors, got " + std::to_string(n));
  if (spec.dim > std::min(n, d)) {
    fail(ErrorCode::RankDeficient, "requested dim " + std::to_string(spec.dim) + " exceeds min(N, D) = " +
                                       std::to_string(std::min(n, d)));
  }
  Eigen::MatrixXd data(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x(r, c);
  }
  FittedProjection fit;
  fit.spec = spec;
  fit.input_dim = d;
  fit.mean.assign(d, 0.0);
  fit.projection = Matrix<double>(spec.dim, d);
  fit.scale.assign(spec.dim, 1.0);

  std::vector<double> spectrum(spec.dim);  // variance captured by each component
  const double denom = static_cast<double>(n - 1);
  if (spec.kind == step::ProjectionKind::PCA) {
    const Eigen::RowVectorXd mu = data.colwise().mean();
    for (std::size_t c = 0; c < d; ++c) fit.mean[c] = mu(static_cast<Eigen::Index>(c));
    const Eigen::MatrixXd centered = data.rowwise() - mu;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) fail(ErrorCode::RankDeficient, "eigendecomposition did not converge");
    // eigenvalues ascend; walk from the top
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const auto col = static_cast<Eigen::Index>(d - 1 - k);
      spectrum[k] = solver.eigenvalues()(col);
      for (std::size_t c = 0; c < d; ++c) fit.projection(k, c) = solver.eigenvectors()(static_cast<Eigen::Index>(c), col);
    }
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      const double sigma = svd.singularValues()(col);
      spectrum[k] = sigma * sigma / denom;
      for (std::size_t c = 0; c < d; ++c) fit.projection(k, c) = svd.matrixV()(static_cast<Eigen::Index>(c), col);
    }
  }
  for (std::size_t k = 0; k < spec.dim; ++k) {
    if (!(spectrum[k] > 1e-10)) {
      fail(ErrorCode::RankDeficient, "component " + std::to_string(k) + " has variance " + std::to_string(spectrum[k]) +
                                         " (requested dim " + std::to_string(spec.dim) + ")");
    }
    if (spec.whiten) fit.scale[k] = std::sqrt(spectrum[k]) + 1e-12;
  }
  fix_row_signs(fit.projection);
  return fit;
}

inline std::vector<double> project(std::span<const double> v, const FittedProjection& p) {
  std::vector<double> out(p.spec.dim, 0.0);
  for (std::size_t k = 0; k < p.spec.dim; ++k) {
    const auto row = p.projection.row(k);
    double acc = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) acc += (v[c] - p.mean[c]) * row[c];
    out[k] = acc / p.scale[k];
  }
  return out;
}

inline Matrix<double> to_double(const MatrixF& m) {
  return Matrix<double>(m.rows(), m.cols(), std::vector<double>(m.data().begin(), m.data().end()));
}

}  // namespace detail

/// Fit the chain's projection step on the gallery, after applying the steps
/// that precede it.
inline FittedTransform fit_transform_chain(const TransformChainSpec& spec, const MatrixF& gallery) {
  validate_chain_spec(spec);
  FittedTransform fitted{spec, gallery.cols(), std::nullopt};
  Matrix<double> x = detail::to_double(gallery);
  for (const auto& s : spec.steps) {
    if (std::holds_alternative<step::L2N>(s)) {
      for (std::size_t r = 0; r < x.rows(); ++r) l2_normalize_inplace(x.row(r));
    } else {
      fitted.projection = detail::fit_projection(std::get<step::Projection>(s), x);
      break;
    }
  }
  if (!fitted.projection && gallery.rows() < 1) fail(ErrorCode::NotEnoughSamples, "empty gallery");
  return fitted;
}

/// Apply a fitted chain to one vector.
inline std::vector<float> apply_transform_chain(std::span<const float> v, const FittedTransform& t) {
  if (v.size() != t.input_dim) {
    fail(ErrorCode::DimMismatch, "vector dimension " + std::to_string(v.size()) + " != fitted " + std::to_string(t.input_dim));
  }
  std::vector<double> x(v.begin(), v.end());
  for (const auto& s : t.spec.steps) {
    if (std::holds_alternative<step::L2N>(s)) {
      l2_normalize_inplace(std::span<double>(x));
    } else {
      x = detail::project(x, *t.projection);
    }
  }
  return std::vector<float>(x.begin(), x.end());
}

inline MatrixF apply_transform_chain(const MatrixF& m, const FittedTransform& t) {
  MatrixF out(m.rows(), t.output_dim());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto y = apply_transform_chain(m.row(r), t);
    std::copy(y.begin(), y.end(), out.row(r).begin());
  }
  return out;
}

inline FeaturePack apply_transform_chain(const FeaturePack& p, const FittedTransform& t) {
  return make_vectors_pack(p.ids, p.layer_tag, apply_transform_chain(p.matrix(), t));
}

// Fitted transform file: "FTR1", u32 LE header length, JSON header, f64 LE payload
// of mean[input_dim], projection[dim * input_dim] and scale[dim].

inline nlohmann::ordered_json chain_spec_to_json(const TransformChainSpec& spec) {
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& s : spec.steps) {
    if (std::holds_alternative<step::L2N>(s)) {
      steps.push_back("L2N");
    } else {
      const auto& p = std::get<step::Projection>(s);
      nlohmann::ordered_json j;
      j["kind"] = p.kind == step::ProjectionKind::PCA ? "PCA" : "SVD";
      j["dim"] = p.dim;
      j["whiten"] = p.whiten;
      steps.push_back(std::move(j));
    }
  }
  return steps;
}

inline void save_fitted_transform(const FittedTransform& t, const std::filesystem::path& path) {
  nlohmann::ordered_json h;
  h["steps"] = chain_spec_to_json(t.spec);
  h["input_dim"] = t.input_dim;
  h["dtype"] = "f64";
  const std::string header = h.dump();
  std::vector<double> payload;
  if (t.projection) {
    payload = t.projection->mean;
    payload.insert(payload.end(), t.projection->projection.data().begin(), t.projection->projection.data().end());
    payload.insert(payload.end(), t.projection->scale.begin(), t.projection->scale.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  const auto len = static_cast<std::uint32_t>(header.size());
  out.write("FTR1", 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

inline FittedTransform load_fitted_transform(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto bad = [&](const std::string& why) -> void { fail(ErrorCode::FormatError, path.string() + ": " + why); };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "FTR1", 4) != 0) bad("bad magic, expected FTR1");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (bytes.size() < 8 + std::size_t{len}) bad("truncated header");
  FittedTransform t;
  try {
    const auto h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    t.input_dim = h.at("input_dim").get<std::size_t>();
    for (const auto& s : h.at("steps")) {
      if (s.is_string() && s.get<std::string>() == "L2N") {
        t.spec.steps.emplace_back(step::L2N{});
      } else {
        step::Projection p;
        const auto kind = s.at("kind").get<std::string>();
        if (kind != "PCA" && kind != "SVD") bad("unknown projection kind " + kind);
        p.kind = kind == "PCA" ? step::ProjectionKind::PCA : step::ProjectionKind::SVD;
        p.dim = s.at("dim").get<std::size_t>();
        p.whiten = s.at("whiten").get<bool>();
        t.spec.steps.emplace_back(p);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("malformed header: ") + e.what());
  }
  validate_chain_spec(t.spec);
  const std::size_t payload_bytes = bytes.size() - 8 - len;
  for (const auto& s : t.spec.steps) {
    if (const auto* p = std::get_if<step::Projection>(&s)) {
      const std::size_t d = t.input_dim, k = p->dim;
      const std::size_t count = d + k * d + k;
      if (payload_bytes != count * sizeof(double)) {
        bad("payload size mismatch: expected " + std::to_string(count * sizeof(double)) + " bytes, got " +
            std::to_string(payload_bytes));
      }
      std::vector<double> payload(count);
      std::memcpy(payload.data(), bytes.data() + 8 + len, payload_bytes);
      FittedProjection fp;
      fp.spec = *p;
      fp.input_dim = d;
      fp.mean.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(d));
      fp.projection = Matrix<double>(k, d, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(d),
                                                               payload.begin() + static_cast<std::ptrdiff_t>(d + k * d)));
      fp.scale.assign(payload.begin() + static_cast<std::ptrdiff_t>(d + k * d), payload.end());
      t.projection = std::move(fp);
    }
  }
  if (!t.projection && payload_bytes != 0) bad("unexpected payload for a chain without projection");
  return t;
}

}  // namespace retri
