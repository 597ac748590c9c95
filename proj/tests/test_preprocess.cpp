#include "retri/preprocess.hpp"

#include "test_helpers.hpp"

using namespace retri;

namespace {

RasterImage random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  SplitMix64 rng(seed);
  RasterImage img(h, w);
  for (auto& x : img.pixels) x = rng.uniform_float();
  return img;
}

TransformSpec identity_norm(std::vector<PreprocessOp> ops) {
  TransformSpec s;
  s.ops = std::move(ops);
  s.mean = {0.0f, 0.0f, 0.0f};
  s.std = {1.0f, 1.0f, 1.0f};
  return s;
}

}  // namespace

TEST(Preprocess, DirectResizeShape) {
  const auto views = apply_transform(random_image(4, 2, 1), identity_norm({ops::DirectResize{2, 2}}));
  ASSERT_EQ(views.size(), 1u);
  EXPECT_EQ(views[0].height, 2u);
  EXPECT_EQ(views[0].width, 2u);
}

TEST(Preprocess, DirectResizeToSameSizeIsIdentity) {
  const auto img = random_image(5, 7, 2);
  const auto views = apply_transform(img, identity_norm({ops::DirectResize{5, 7}}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(views[0].at(c, i, j), img.at(i, j, c));
}

TEST(Preprocess, BilinearHalfPixelUpsample) {
  RasterImage img(1, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0.0f;
    img.at(0, 1, c) = 1.0f;
  }
  const auto out = resize_bilinear(img, 1, 4);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out.at(0, 1, 0), 0.25f);
  EXPECT_FLOAT_EQ(out.at(0, 2, 0), 0.75f);
  EXPECT_FLOAT_EQ(out.at(0, 3, 0), 1.0f);
}

TEST(Preprocess, PadResizeFillsRightBandWithMean) {
  const auto img = random_image(8, 4, 3);
  const auto views = apply_transform(img, identity_norm({ops::PadResize{8}}));
  ASSERT_EQ(views.size(), 1u);
  const auto& v = views[0];
  ASSERT_EQ(v.height, 8u);
  ASSERT_EQ(v.width, 8u);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(v.at(c, i, j), img.at(i, j, c));
      for (std::size_t j = 4; j < 8; ++j) EXPECT_EQ(v.at(c, i, j), kImageNetMean[c]);
    }
  }
}

TEST(Preprocess, PadResizeScalesLongerSide) {
  const auto views = apply_transform(random_image(3, 6, 4), identity_norm({ops::PadResize{4}}));
  EXPECT_EQ(views[0].height, 4u);
  EXPECT_EQ(views[0].width, 4u);
  // 3x6 -> 2x4 content, bottom two rows padded
  EXPECT_EQ(views[0].at(1, 3, 0), kImageNetMean[1]);
}

TEST(Preprocess, ShorterResizeKeepsAspect) {
  SplitMix64 rng(9);
  for (int t = 0; t < 30; ++t) {
    const std::size_t h = 3 + rng.below(40), w = 3 + rng.below(40), s = 2 + rng.below(30);
    const auto views = apply_transform(random_image(h, w, t), identity_norm({ops::ShorterResize{s}}));
    const auto& v = views[0];
    EXPECT_EQ(std::min(v.height, v.width), s);
    const double expected_long = static_cast<double>(std::max(h, w)) * s / static_cast<double>(std::min(h, w));
    EXPECT_LE(std::abs(static_cast<double>(std::max(v.height, v.width)) - expected_long), 1.0);
  }
}

TEST(Preprocess, TenCropViewCount) {
  const auto views = apply_transform(random_image(6, 6, 5),
                                     identity_norm({ops::ShorterResize{4}, ops::CenterCrop{4, 4}, ops::TenCrop{2, 2}}));
  ASSERT_EQ(views.size(), 10u);
  for (const auto& v : views) {
    EXPECT_EQ(v.height, 2u);
    EXPECT_EQ(v.width, 2u);
  }
}

TEST(Preprocess, TenCropMirrorsAndCorners) {
  const auto img = random_image(5, 7, 6);
  const auto views = apply_transform(img, identity_norm({ops::TenCrop{3, 4}}));
  ASSERT_EQ(views.size(), 10u);
  // top-left and bottom-right corners
  EXPECT_EQ(views[0].at(0, 0, 0), img.at(0, 0, 0));
  EXPECT_EQ(views[3].at(2, 2, 3), img.at(4, 6, 2));
  // center crop: top = (5-3)/2 = 1, left = (7-4)/2 = 1
  EXPECT_EQ(views[4].at(1, 0, 0), img.at(1, 1, 1));
  for (std::size_t v = 0; v < 5; ++v) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(views[v + 5].at(c, i, j), views[v].at(c, i, 3 - j));
  }
}

TEST(Preprocess, TwoFlipMirrors) {
  const auto views = apply_transform(random_image(4, 5, 7), identity_norm({ops::DirectResize{3, 3}, ops::TwoFlip{}}));
  ASSERT_EQ(views.size(), 2u);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(views[1].at(c, i, j), views[0].at(c, i, 2 - j));
}

TEST(Preprocess, CenterCropFloorsOddRemainder) {
  const auto img = random_image(5, 5, 8);
  const auto views = apply_transform(img, identity_norm({ops::CenterCrop{2, 2}}));
  EXPECT_EQ(views[0].at(0, 0, 0), img.at(1, 1, 0));
}

TEST(Preprocess, NormalizationIsLastStep) {
  RasterImage img(1, 1);
  img.at(0, 0, 0) = 0.5f;
  img.at(0, 0, 1) = 0.5f;
  img.at(0, 0, 2) = 0.5f;
  const auto views = apply_transform(img, TransformSpec{});
  EXPECT_FLOAT_EQ(views[0].at(0, 0, 0), (0.5f - 0.485f) / 0.229f);
  EXPECT_FLOAT_EQ(views[0].at(2, 0, 0), (0.5f - 0.406f) / 0.225f);
}

TEST(Preprocess, CropTooLarge) {
  try {
    apply_transform(random_image(4, 4, 1), identity_norm({ops::CenterCrop{5, 2}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CropTooLarge);
    EXPECT_NE(std::string(e.what()).find("CC(5,2)"), std::string::npos);
  }
}

TEST(Preprocess, InvalidSpecs) {
  EXPECT_RETRI_ERROR(validate_transform_spec(identity_norm({ops::TwoFlip{}, ops::CenterCrop{1, 1}})), ErrorCode::InvalidSpec);
  EXPECT_RETRI_ERROR(validate_transform_spec(identity_norm({ops::TwoFlip{}, ops::TenCrop{1, 1}})), ErrorCode::InvalidSpec);
  EXPECT_RETRI_ERROR(validate_transform_spec(identity_norm({ops::ShorterResize{0}})), ErrorCode::InvalidSpec);
  auto bad_std = identity_norm({});
  bad_std.std[1] = 0.0f;
  EXPECT_RETRI_ERROR(validate_transform_spec(bad_std), ErrorCode::InvalidSpec);
}

TEST(Preprocess, ViewCount) {
  EXPECT_EQ(view_count(identity_norm({})), 1u);
  EXPECT_EQ(view_count(identity_norm({ops::TwoFlip{}})), 2u);
  EXPECT_EQ(view_count(identity_norm({ops::DirectResize{2, 2}, ops::TenCrop{1, 1}})), 10u);
}
