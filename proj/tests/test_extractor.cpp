#include "retri/extractor.hpp"

#include "test_helpers.hpp"

using namespace retri;
using retri::testing::TempDir;

namespace {

DatasetManifest small_manifest(std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) m.records.push_back({"img" + std::to_string(i) + ".jpg", i % 2 ? "b" : "a", std::nullopt, false});
  return m;
}

ExtractorSpec mock_spec(std::uint64_t seed, std::size_t c, std::size_t h, std::size_t w, float signal = 0.0f) {
  return ExtractorSpec{backend::Mock{seed, c, h, w, signal}, "pool5"};
}

}  // namespace

TEST(SplitMix64, ReferenceSequence) {
  // Reference outputs of SplitMix64 seeded with 0.
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next(), 0x06C45D188009454FULL);
}

TEST(Extract, MockShapeAndDeterminism) {
  const auto m = small_manifest(3);
  const auto a = extract(m, mock_spec(7, 4, 2, 2), TransformSpec{});
  EXPECT_EQ(a.shape, (std::vector<std::size_t>{3, 4, 2, 2}));
  EXPECT_EQ(a.ids, (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_EQ(a.layer_tag, "pool5");
  const auto b = extract(m, mock_spec(7, 4, 2, 2), TransformSpec{});
  EXPECT_EQ(encode_pack(a), encode_pack(b));
  const auto c = extract(m, mock_spec(8, 4, 2, 2), TransformSpec{});
  EXPECT_NE(a.data, c.data);
}

TEST(Extract, MockValuesFollowSeedXorIndex) {
  const auto m = small_manifest(3);
  const auto p = extract(m, mock_spec(7, 2, 1, 1), TransformSpec{});
  SplitMix64 row2(7 ^ 2);
  EXPECT_EQ(p.data[4], row2.uniform_float());
  EXPECT_EQ(p.data[5], row2.uniform_float());
  for (float x : p.data) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LT(x, 1.0f);
  }
}

TEST(Extract, MockViewsFromTransform) {
  TransformSpec t;
  t.ops = {ops::TwoFlip{}};
  const auto p = extract(small_manifest(3), mock_spec(1, 2, 2, 2), t);
  EXPECT_EQ(p.views, 2u);
  EXPECT_EQ(p.shape[0], 6u);
  EXPECT_EQ(p.ids.size(), 3u);
}

TEST(Extract, MockLabelSignalSharedAcrossSeeds) {
  const auto m = small_manifest(4);
  const auto a = extract(m, mock_spec(1, 8, 1, 1, 1.0f), TransformSpec{});
  const auto b = extract(m, mock_spec(2, 8, 1, 1, 1.0f), TransformSpec{});
  const auto noise_a = extract(m, mock_spec(1, 8, 1, 1), TransformSpec{});
  const auto noise_b = extract(m, mock_spec(2, 8, 1, 1), TransformSpec{});
  // subtracting the noise leaves the same label prototype for both seeds
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    EXPECT_NEAR(a.data[k] - noise_a.data[k], b.data[k] - noise_b.data[k], 1e-6);
  }
}

TEST(Extract, PackFileIdentity) {
  TempDir dir("extract_pack");
  const auto m = small_manifest(3);
  const auto p = extract(m, mock_spec(3, 2, 2, 2), TransformSpec{});
  write_pack(p, dir / "maps.fpk");
  const auto q = extract(m, ExtractorSpec{backend::PackFile{dir / "maps.fpk"}, "pool5"}, TransformSpec{});
  EXPECT_EQ(q, p);
}

TEST(Extract, PackFileMissingIds) {
  TempDir dir("extract_cov");
  auto p = extract(small_manifest(2), mock_spec(3, 2, 1, 1), TransformSpec{});
  write_pack(p, dir / "maps.fpk");
  try {
    extract(small_manifest(3), ExtractorSpec{backend::PackFile{dir / "maps.fpk"}, "pool5"}, TransformSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IdCoverageError);
    EXPECT_NE(std::string(e.what()).find("{2}"), std::string::npos) << e.what();
  }
}

TEST(Extract, PackFileExtraIdsAreDropped) {
  TempDir dir("extract_extra");
  auto p = extract(small_manifest(4), mock_spec(3, 2, 1, 1), TransformSpec{});
  write_pack(p, dir / "maps.fpk");
  const auto q = extract(small_manifest(2), ExtractorSpec{backend::PackFile{dir / "maps.fpk"}, "pool5"}, TransformSpec{});
  EXPECT_EQ(q.ids, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(q.data, std::vector<float>(p.data.begin(), p.data.begin() + 4));
}

TEST(Extract, PackFileMissing) {
  EXPECT_RETRI_ERROR(extract(small_manifest(1), ExtractorSpec{backend::PackFile{"/nonexistent/x.fpk"}, "pool5"}, TransformSpec{}),
                     ErrorCode::BackendUnavailable);
}

namespace {

RasterImage flat_image(const ImageRecord& r) {
  RasterImage img(4, 6, r.label == "a" ? 0.25f : 0.75f);
  return img;
}

}  // namespace

TEST(Extract, SubprocessEchoesRequest) {
  TransformSpec t;
  t.ops = {ops::DirectResize{2, 2}, ops::TwoFlip{}};
  const auto p = extract(small_manifest(3), ExtractorSpec{backend::Subprocess{"cp {input} {output}"}, "input_echo"}, t,
                         flat_image);
  EXPECT_EQ(p.kind, PackKind::Maps);
  EXPECT_EQ(p.views, 2u);
  EXPECT_EQ(p.shape, (std::vector<std::size_t>{6, 3, 2, 2}));
  EXPECT_EQ(p.layer_tag, "input_echo");
  EXPECT_FLOAT_EQ(p.data[0], (0.25f - 0.485f) / 0.229f);
}

TEST(Extract, SubprocessFailureStatus) {
  EXPECT_RETRI_ERROR(extract(small_manifest(1), ExtractorSpec{backend::Subprocess{"false"}, "x"}, TransformSpec{}, flat_image),
                     ErrorCode::SubprocessProtocolError);
}

TEST(Extract, SubprocessMissingCommand) {
  EXPECT_RETRI_ERROR(extract(small_manifest(1), ExtractorSpec{backend::Subprocess{"definitely-not-a-command-xyz {input}"}, "x"},
                             TransformSpec{}, flat_image),
                     ErrorCode::BackendUnavailable);
}

TEST(Extract, SubprocessWrongOutput) {
  TempDir dir("extract_wrong");
  auto other = extract(small_manifest(2), mock_spec(1, 1, 1, 1), TransformSpec{});
  write_pack(other, dir / "other.fpk");
  const std::string cmd = "cp " + (dir / "other.fpk").string() + " {output}";
  EXPECT_RETRI_ERROR(extract(small_manifest(3), ExtractorSpec{backend::Subprocess{cmd}, "x"}, TransformSpec{}, flat_image),
                     ErrorCode::SubprocessProtocolError);
}
