#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <tuple>
#include <type_traits>
#include <variant>
#include <vector>

#include "retri/error.hpp"

namespace retri {

/// Interleaved RGB image, row-major [height][width][3], values in [0, 1].
struct RasterImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  RasterImage() = default;
  RasterImage(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t i, std::size_t j, std::size_t c) { return pixels[(i * width + j) * 3 + c]; }
  float at(std::size_t i, std::size_t j, std::size_t c) const { return pixels[(i * width + j) * 3 + c]; }

  bool operator==(const RasterImage&) const = default;
};

/// Normalized CHW tensor for one view.
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;  // [3][height][width]

  float at(std::size_t c, std::size_t i, std::size_t j) const { return data[(c * height + i) * width + j]; }
  bool operator==(const ImageTensor&) const = default;
};

namespace ops {
struct DirectResize { std::size_t height, width; };
struct PadResize { std::size_t size; };
struct ShorterResize { std::size_t size; };
struct CenterCrop { std::size_t height, width; };
struct TwoFlip {};
struct TenCrop { std::size_t height, width; };
}  // namespace ops

using PreprocessOp = std::variant<ops::DirectResize, ops::PadResize, ops::ShorterResize, ops::CenterCrop,
                                  ops::TwoFlip, ops::TenCrop>;

inline constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};

struct TransformSpec {
  std::vector<PreprocessOp> ops;
  std::array<float, 3> mean = kImageNetMean;
  std::array<float, 3> std = kImageNetStd;
};

inline std::string op_name(const PreprocessOp& op) {
  struct Namer {
    std::string operator()(const ops::DirectResize& o) const {
      return "DR(" + std::to_string(o.height) + "," + std::to_string(o.width) + ")";
    }
    std::string operator()(const ops::PadResize& o) const { return "PR(" + std::to_string(o.size) + ")"; }
    std::string operator()(const ops::ShorterResize& o) const { return "SR(" + std::to_string(o.size) + ")"; }
    std::string operator()(const ops::CenterCrop& o) const {
      return "CC(" + std::to_string(o.height) + "," + std::to_string(o.width) + ")";
    }
    std::string operator()(const ops::TwoFlip&) const { return "TF"; }
    std::string operator()(const ops::TenCrop& o) const {
      return "TC(" + std::to_string(o.height) + "," + std::to_string(o.width) + ")";
    }
  };
  return std::visit(Namer{}, op);
}

inline void validate_transform_spec(const TransformSpec& spec) {
  for (std::size_t k = 0; k < spec.ops.size(); ++k) {
    const auto& op = spec.ops[k];
    const bool multiview = std::holds_alternative<ops::TwoFlip>(op) || std::holds_alternative<ops::TenCrop>(op);
    if (multiview && k + 1 != spec.ops.size()) {
      fail(ErrorCode::InvalidSpec, op_name(op) + " must be the last preprocessing op");
    }
    const bool zero = std::visit(
        [](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, ops::PadResize> || std::is_same_v<T, ops::ShorterResize>) {
            return o.size == 0;
          } else if constexpr (std::is_same_v<T, ops::TwoFlip>) {
            return false;
          } else {
            return o.height == 0 || o.width == 0;
          }
        },
        op);
    if (zero) fail(ErrorCode::InvalidSpec, op_name(op) + " has a zero size");
  }
  for (float s : spec.std) {
    if (!(s > 0.0f)) fail(ErrorCode::InvalidSpec, "normalization std components must be > 0");
  }
}

/// Number of views a spec produces: 2 after TF, 10 after TC, otherwise 1.
inline std::size_t view_count(const TransformSpec& spec) {
  if (spec.ops.empty()) return 1;
  if (std::holds_alternative<ops::TwoFlip>(spec.ops.back())) return 2;
  if (std::holds_alternative<ops::TenCrop>(spec.ops.back())) return 10;
  return 1;
}

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// Source coordinates below zero clamp to the first pixel.
inline RasterImage resize_bilinear(const RasterImage& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  RasterImage out(out_h, out_w);
  const double scale_y = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double scale_x = static_cast<double>(img.width) / static_cast<double>(out_w);
  auto source = [](std::size_t dst, double scale, std::size_t in) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    auto lo = static_cast<std::size_t>(s);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = lo + 1 < in ? lo + 1 : lo;
    return std::tuple{lo, hi, s - static_cast<double>(lo)};
  };
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto [y0, y1, fy] = source(i, scale_y, img.height);
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto [x0, x1, fx] = source(j, scale_x, img.width);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        const double bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(i, j, c) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

inline RasterImage crop(const RasterImage& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  RasterImage out(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) out.at(i, j, c) = img.at(top + i, left + j, c);
    }
  }
  return out;
}

inline RasterImage mirror_width(const RasterImage& img) {
  RasterImage out(img.height, img.width);
  for (std::size_t i = 0; i < img.height; ++i) {
    for (std::size_t j = 0; j < img.width; ++j) {
      for (std::size_t c = 0; c < 3; ++c) out.at(i, j, c) = img.at(i, img.width - 1 - j, c);
    }
  }
  return out;
}

namespace detail {

inline void require_fits(const PreprocessOp& op, const RasterImage& img, std::size_t h, std::size_t w) {
  if (h > img.height || w > img.width) {
    fail(ErrorCode::CropTooLarge, op_name(op) + " needs " + std::to_string(h) + "x" + std::to_string(w) +
                                      " but the image is " + std::to_string(img.height) + "x" +
                                      std::to_string(img.width));
  }
}

inline std::size_t scaled_side(std::size_t side, std::size_t target, std::size_t reference) {
  const auto v = std::lround(static_cast<double>(side) * static_cast<double>(target) / static_cast<double>(reference));
  return static_cast<std::size_t>(std::max<long>(1, v));
}

inline ImageTensor normalize(const RasterImage& img, const TransformSpec& spec) {
  ImageTensor t{img.height, img.width, std::vector<float>(3 * img.height * img.width)};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < img.height; ++i) {
      for (std::size_t j = 0; j < img.width; ++j) {
        t.data[(c * img.height + i) * img.width + j] = (img.at(i, j, c) - spec.mean[c]) / spec.std[c];
      }
    }
  }
  return t;
}

}  // namespace detail

/// Run the preprocessing chain and return V normalized views.
///
/// TC emits top-left, top-right, bottom-left, bottom-right and center crops,
/// followed by the width-mirror of each of those five in the same order.
inline std::vector<ImageTensor> apply_transform(const RasterImage& input, const TransformSpec& spec) {
  validate_transform_spec(spec);
  if (input.height == 0 || input.width == 0) fail(ErrorCode::InvalidSpec, "image has a zero dimension");

  RasterImage img = input;
  std::vector<RasterImage> views;
  for (const auto& op : spec.ops) {
    if (const auto* dr = std::get_if<ops::DirectResize>(&op)) {
      img = resize_bilinear(img, dr->height, dr->width);
    } else if (const auto* pr = std::get_if<ops::PadResize>(&op)) {
      std::size_t h = pr->size, w = pr->size;
      if (img.height >= img.width) {
        w = detail::scaled_side(img.width, pr->size, img.height);
      } else {
        h = detail::scaled_side(img.height, pr->size, img.width);
      }
      const RasterImage scaled = resize_bilinear(img, h, w);
      RasterImage padded(pr->size, pr->size);
      for (std::size_t i = 0; i < pr->size; ++i) {
        for (std::size_t j = 0; j < pr->size; ++j) {
          for (std::size_t c = 0; c < 3; ++c) {
            padded.at(i, j, c) = (i < h && j < w) ? scaled.at(i, j, c) : kImageNetMean[c];
          }
        }
      }
      img = std::move(padded);
    } else if (const auto* sr = std::get_if<ops::ShorterResize>(&op)) {
      if (img.height <= img.width) {
        img = resize_bilinear(img, sr->size, detail::scaled_side(img.width, sr->size, img.height));
      } else {
        img = resize_bilinear(img, detail::scaled_side(img.height, sr->size, img.width), sr->size);
      }
    } else if (const auto* cc = std::get_if<ops::CenterCrop>(&op)) {
      detail::require_fits(op, img, cc->height, cc->width);
      img = crop(img, (img.height - cc->height) / 2, (img.width - cc->width) / 2, cc->height, cc->width);
    } else if (std::holds_alternative<ops::TwoFlip>(op)) {
      views.push_back(img);
      views.push_back(mirror_width(img));
    } else if (const auto* tc = std::get_if<ops::TenCrop>(&op)) {
      detail::require_fits(op, img, tc->height, tc->width);
      const std::size_t h = tc->height, w = tc->width;
      const std::size_t bottom = img.height - h, right = img.width - w;
      const std::array<std::pair<std::size_t, std::size_t>, 5> anchors{
          {{0, 0}, {0, right}, {bottom, 0}, {bottom, right}, {bottom / 2, right / 2}}};
      for (const auto& [top, left] : anchors) views.push_back(crop(img, top, left, h, w));
      for (std::size_t v = 0; v < 5; ++v) views.push_back(mirror_width(views[v]));
    }
  }
  if (views.empty()) views.push_back(std::move(img));

  std::vector<ImageTensor> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(detail::normalize(v, spec));
  return out;
}

}  // namespace retri
