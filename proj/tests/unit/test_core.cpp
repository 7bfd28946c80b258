#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "guing/config.hpp"
#include "guing/core.hpp"
#include "guing/jsonl.hpp"
#include "guing/rng.hpp"

using namespace guing;

namespace {

// Counts unit pixels [x, x+1) x [y, y+1) covered by a half-open box with
// integer corners.
bool covers(const BoundingBox& b, int x, int y) {
  return x >= b.x_min() && x + 1 <= b.x_max() && y >= b.y_min() && y + 1 <= b.y_max();
}

double raster_iou(const BoundingBox& a, const BoundingBox& b, int lo, int hi) {
  long inter = 0, uni = 0;
  for (int x = lo; x < hi; ++x)
    for (int y = lo; y < hi; ++y) {
      const bool ia = covers(a, x, y), ib = covers(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

BoundingBox random_int_box(SplitMix64& rng, int span) {
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(span - 1)));
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(span - 1)));
  const int x1 = x0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span - x0 - 1)));
  const int y1 = y0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(span - y0 - 1)));
  return {double(x0), double(y0), double(x1), double(y1)};
}

std::vector<float> random_floats(SplitMix64& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

}  // namespace

TEST(Normalize, ThreeFourFive) {
  const std::vector<float> v{3, 4};
  const auto u = l2_normalize(std::span<const float>(v));
  ASSERT_EQ(u.size(), 2u);
  EXPECT_NEAR(u[0], 0.6, 1e-7);
  EXPECT_NEAR(u[1], 0.8, 1e-7);
}

TEST(Normalize, AlreadyUnitIsUnchanged) {
  const std::vector<float> v{1, 0, 0};
  EXPECT_EQ(l2_normalize(std::span<const float>(v)), v);
}

TEST(Normalize, ZeroVectorThrows) {
  const std::vector<float> v{0, 0};
  try {
    l2_normalize(std::span<const float>(v));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroVector);
  }
  EXPECT_THROW(EmbeddingVector(std::span<const float>(v)), Error);
}

TEST(Normalize, NonFiniteThrows) {
  const std::vector<float> v{NAN, 1};
  EXPECT_THROW(l2_normalize(std::span<const float>(v)), Error);
}

TEST(Normalize, IdempotentProperty) {
  SplitMix64 rng(1);
  for (int t = 0; t < 500; ++t) {
    const auto v = random_floats(rng, 1 + rng.below(300), std::exp(rng.uniform(-5, 5)));
    if (l2_norm(v) < 1e-6) continue;
    const auto once = l2_normalize(std::span<const float>(v));
    const auto twice = l2_normalize(std::span<const float>(once));
    for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(once[i], twice[i], 1e-6);
    ASSERT_NEAR(l2_norm(once), 1.0, 1e-6);
  }
}

TEST(Cosine, Examples) {
  const std::vector<float> e0{1, 0}, e1{0, 1}, neg{-1, 0};
  const EmbeddingVector a(e0), b(e1), c(neg);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, c), -1.0);
}

TEST(Cosine, DimensionMismatch) {
  const std::vector<float> x{1, 0}, y{1, 0, 0};
  try {
    cosine_similarity(EmbeddingVector(x), EmbeddingVector(y));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(Cosine, SelfSimilarityProperty) {
  SplitMix64 rng(2);
  for (int t = 0; t < 500; ++t) {
    const auto v = random_floats(rng, 2 + rng.below(600));
    const EmbeddingVector a(v);
    const double s = cosine_similarity(a, a);
    ASSERT_NEAR(s, 1.0, 1e-6);
    ASSERT_LE(s, 1.0);
  }
}

TEST(Cosine, BoundedAndSymmetricProperty) {
  SplitMix64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 2 + rng.below(100);
    const EmbeddingVector a(random_floats(rng, d)), b(random_floats(rng, d));
    const double s = cosine_similarity(a, b);
    ASSERT_GE(s, -1.0);
    ASSERT_LE(s, 1.0);
    ASSERT_EQ(s, cosine_similarity(b, a));
  }
}

TEST(Box, RejectsDegenerate) {
  EXPECT_THROW(BoundingBox(0, 0, 0, 1), Error);
  EXPECT_THROW(BoundingBox(0, 2, 1, 1), Error);
  EXPECT_THROW(BoundingBox(0, 0, NAN, 1), Error);
}

TEST(Iou, Examples) {
  const BoundingBox a(0, 0, 2, 2), b(1, 1, 3, 3), far(10, 10, 11, 11);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, far), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(raster_iou(a, b, 0, 4), 1.0 / 7.0, 1e-12);
}

TEST(Iou, TouchingEdgesDoNotOverlap) {
  EXPECT_EQ(iou(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 2, 1)), 0.0);
}

TEST(Iou, MatchesRasterOracleOnIntegerBoxes) {
  SplitMix64 rng(4);
  for (int t = 0; t < 400; ++t) {
    const auto a = random_int_box(rng, 24), b = random_int_box(rng, 24);
    ASSERT_NEAR(iou(a, b), raster_iou(a, b, 0, 24), 1e-12);
  }
}

TEST(Iou, SymmetricAndTranslationInvariantProperty) {
  SplitMix64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_int_box(rng, 64), b = random_int_box(rng, 64);
    ASSERT_EQ(iou(a, b), iou(b, a));
    // Integer shifts keep every coordinate exact, so the result is bit-equal.
    const double dx = static_cast<double>(rng.below(1000)) - 500, dy = static_cast<double>(rng.below(1000)) - 500;
    ASSERT_EQ(iou(a, b), iou(a.translated(dx, dy), b.translated(dx, dy)));
    const double v = iou(a, b);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Box, Within) {
  const BoundingBox b(100, 200, 900, 1800);
  EXPECT_TRUE(b.within(1000, 2000));
  EXPECT_TRUE(BoundingBox(0, 0, 1000, 2000).within(1000, 2000));
  EXPECT_FALSE(BoundingBox(0, 0, 1001, 2000).within(1000, 2000));
  EXPECT_FALSE(BoundingBox(-1, 0, 10, 10).within(1000, 2000));
}

TEST(OcrBoxType, Validates) {
  EXPECT_THROW(OcrBox(BoundingBox(0, 0, 1, 1), "", 0.5), Error);
  EXPECT_THROW(OcrBox(BoundingBox(0, 0, 1, 1), "x", 1.5), Error);
  EXPECT_NO_THROW(OcrBox(BoundingBox(0, 0, 1, 1), "x", 1.0));
}

TEST(ScreenshotRecordType, Validates) {
  ScreenshotRecord r;
  r.id = "s1";
  r.content_hash = std::string(40, 'a');
  r.width_px = 10;
  r.height_px = 20;
  EXPECT_NO_THROW(r.validate());
  r.content_hash = std::string(40, 'A');
  EXPECT_THROW(r.validate(), Error);
  r.content_hash = std::string(39, 'a');
  EXPECT_THROW(r.validate(), Error);
}

TEST(ScreenshotRecordType, JsonRoundTrip) {
  ScreenshotRecord r;
  r.id = "s1";
  r.app_id = "com.example";
  r.source = Source::screen_repo;
  r.image_ref = "img/s1.png#xywh=1,2,3,4";
  r.content_hash = std::string(40, 'b');
  r.caption = "Track sleep";
  r.width_px = 3;
  r.height_px = 4;
  EXPECT_EQ(screenshot_from_json(to_json(r)), r);
  r.caption.reset();
  EXPECT_EQ(screenshot_from_json(to_json(r)), r);
}

TEST(Rng, DeterministicAndUniformRange) {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
  SplitMix64 r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(13), 13u);
  }
}

TEST(Rng, NormalMoments) {
  SplitMix64 r(8);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  SplitMix64 r(9);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Config, ParsesTypedValues) {
  const auto c = KvConfig::parse("# comment\nmode = synthetic\nseed= 12 # trailing\nnoise =0.5\nks = 1, 5,10\n\n");
  EXPECT_EQ(c.str("mode", ""), "synthetic");
  EXPECT_EQ(c.num<std::uint64_t>("seed", 0), 12u);
  EXPECT_DOUBLE_EQ(c.num<double>("noise", 0), 0.5);
  EXPECT_EQ(c.sizes("ks", {}), (std::vector<std::size_t>{1, 5, 10}));
  EXPECT_EQ(c.num<int>("absent", 3), 3);
  EXPECT_NO_THROW(c.reject_unclaimed());
}

TEST(Config, RejectsMalformed) {
  EXPECT_THROW(KvConfig::parse("just words\n"), Error);
  EXPECT_THROW(KvConfig::parse(" = 3\n"), Error);
  const auto c = KvConfig::parse("seed = twelve\nepochs = 5x\n");
  EXPECT_THROW(c.num<int>("seed", 0), Error);
  EXPECT_THROW(c.num<int>("epochs", 0), Error);
}

TEST(Config, UnknownKeysAreErrors) {
  const auto c = KvConfig::parse("mode = synthetic\nnosie = 0.5\n");
  c.str("mode", "");
  EXPECT_THROW(c.reject_unclaimed(), Error);
}
