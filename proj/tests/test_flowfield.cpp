#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "chromaprop/flowfield.hpp"
#include "test_util.hpp"

using namespace chromaprop;

namespace {

FlowField constant_flow(int h, int w, float u, float v) {
  FlowField f(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.uv(0, y, x) = u;
      f.uv(1, y, x) = v;
    }
  return f;
}

FlowField random_flow(int h, int w, std::mt19937_64& rng, double mag) {
  std::uniform_real_distribution<float> d(static_cast<float>(-mag), static_cast<float>(mag));
  FlowField f(h, w);
  for (auto& v : f.uv.values()) v = d(rng);
  return f;
}

// Textbook bilinear lookup written out per pixel.
double bilinear_ref(const Tensor<double>& src, int c, double sx, double sy) {
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, src.height() - 1);
    x = std::clamp(x, 0, src.width() - 1);
    return src(c, y, x);
  };
  return (1 - fx) * (1 - fy) * at(y0, x0) + fx * (1 - fy) * at(y0, x0 + 1) + (1 - fx) * fy * at(y0 + 1, x0) +
         fx * fy * at(y0 + 1, x0 + 1);
}

}  // namespace

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937_64 rng(1);
  const auto src = testutil::random_tensor(3, 11, 13, rng);
  const auto w = warp(src, FlowField(11, 13));
  EXPECT_EQ(w.warped, src);
  EXPECT_EQ(sum(w.valid), 11.0 * 13.0);
}

TEST(Warp, IntegerShiftMovesPixels) {
  std::mt19937_64 rng(2);
  const auto src = testutil::random_tensor(1, 8, 9, rng);
  const auto w = warp(src, constant_flow(8, 9, 2.0f, -1.0f));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool inside = x + 2 < 9 && y - 1 >= 0;
      EXPECT_EQ(w.valid(0, y, x), inside ? 1.0 : 0.0);
      if (inside) EXPECT_EQ(w.warped(0, y, x), src(0, y - 1, x + 2));
    }
}

TEST(Warp, FractionalFlowMatchesReference) {
  std::mt19937_64 rng(3);
  const auto src = testutil::random_tensor(2, 10, 12, rng);
  const auto flow = random_flow(10, 12, rng, 3.0);
  const auto w = warp(src, flow);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) {
        const double sx = x + static_cast<double>(flow.u(y, x)), sy = y + static_cast<double>(flow.v(y, x));
        if (sx < 0 || sy < 0 || sx > 11 || sy > 9) continue;
        EXPECT_NEAR(w.warped(c, y, x), bilinear_ref(src, c, sx, sy), 1e-12);
      }
}

TEST(Warp, OutOfBoundsClampsToBorder) {
  Tensor<double> src(1, 2, 3);
  for (int x = 0; x < 3; ++x) src(0, 0, x) = src(0, 1, x) = x;
  const auto w = warp(src, constant_flow(2, 3, 10.0f, 0.0f));
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      EXPECT_EQ(w.warped(0, y, x), 2.0);
      EXPECT_EQ(w.valid(0, y, x), 0.0);
    }
}

TEST(Warp, IsLinear) {
  std::mt19937_64 rng(4);
  const auto a = testutil::random_tensor(2, 7, 7, rng), b = testutil::random_tensor(2, 7, 7, rng);
  const auto flow = random_flow(7, 7, rng, 2.5);
  auto combo = a;
  combo *= 0.3;
  auto b2 = b;
  b2 *= -1.7;
  combo += b2;
  auto expect = warp(a, flow).warped;
  expect *= 0.3;
  auto wb = warp(b, flow).warped;
  wb *= -1.7;
  expect += wb;
  EXPECT_LT(max_abs_diff(warp(combo, flow).warped, expect), 1e-12);
}

TEST(Warp, AdjointSatisfiesDotProductIdentity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testutil::random_tensor(2, 6, 9, rng);
    const auto g = testutil::random_tensor(2, 6, 9, rng);
    const auto flow = random_flow(6, 9, rng, 4.0);
    const auto wx = warp(x, flow).warped;
    const auto atg = warp_adjoint(g, flow);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += g[i] * wx[i];
      rhs += atg[i] * x[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(Warp, FlowSizeMismatchThrows) {
  EXPECT_THROW(warp(Tensor<double>(1, 4, 4), FlowField(4, 5)), DimensionError);
}

TEST(Flow, ComposeTranslations) {
  const auto c = compose_flows(constant_flow(6, 6, 1.0f, 0.0f), constant_flow(6, 6, 0.0f, -1.0f));
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      EXPECT_EQ(c.u(y, x), 1.0f);
      EXPECT_EQ(c.v(y, x), -1.0f);
    }
}

TEST(Flow, OcclusionMaskAcceptsConsistentPairs) {
  const auto f = constant_flow(5, 5, 1.0f, 0.0f);
  const auto m = occlusion_mask(f, negate(f));
  for (int x = 0; x < 5; ++x) EXPECT_EQ(m(0, 2, x), 1.0);
  const auto bad = occlusion_mask(f, f);
  EXPECT_EQ(bad(0, 2, 2), 0.0);
}

TEST(Flow, SynthFlowSignConvention) {
  MotionSpec m;
  m.background = {2.0, -1.0};
  Mask support(1, 4, 4);
  support(0, 1, 1) = 1.0;
  m.layers.push_back({support, {0.0, 3.0}});
  const auto fw = synth_flow(m, 4, 4, TimeDirection::forward);
  const auto bw = synth_flow(m, 4, 4, TimeDirection::backward);
  EXPECT_EQ(fw.u(0, 0), -2.0f);
  EXPECT_EQ(fw.v(0, 0), 1.0f);
  EXPECT_EQ(bw.u(0, 0), 2.0f);
  EXPECT_EQ(fw.v(1, 1), -3.0f);
  EXPECT_EQ(bw.v(1, 1), 3.0f);
}

TEST(FloFile, RoundTripIsBitExact) {
  testutil::TempDir dir("flo");
  std::mt19937_64 rng(6);
  for (int i = 0; i < 25; ++i) {
    const int h = 1 + static_cast<int>(rng() % 20), w = 1 + static_cast<int>(rng() % 20);
    const auto f = random_flow(h, w, rng, 50.0);
    write_flo(dir.path() / "f.flo", f);
    EXPECT_EQ(read_flo(dir.path() / "f.flo"), f);
  }
}

TEST(FloFile, HeaderAndSize) {
  testutil::TempDir dir("flo");
  write_flo(dir.path() / "a.flo", FlowField(2, 2));
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "a.flo"), 44u);
  std::ifstream is(dir.path() / "a.flo", std::ios::binary);
  char tag[4];
  is.read(tag, 4);
  EXPECT_EQ(std::string(tag, 4), "PIEH");
}

TEST(FloFile, RejectsMalformedFiles) {
  testutil::TempDir dir("flo");
  const auto p = dir.path() / "bad.flo";
  auto write_bytes = [&](const std::string& bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  write_bytes("XXXX");
  EXPECT_THROW(read_flo(p), FormatError);
  write_bytes("PIE");
  EXPECT_THROW(read_flo(p), FormatError);
  write_flo(p, FlowField(3, 3));
  std::filesystem::resize_file(p, 40);
  EXPECT_THROW(read_flo(p), FormatError);
  std::string neg = "PIEH";
  const std::int32_t w = -2, h = 2;
  neg.append(reinterpret_cast<const char*>(&w), 4).append(reinterpret_cast<const char*>(&h), 4);
  write_bytes(neg);
  EXPECT_THROW(read_flo(p), FormatError);
  EXPECT_THROW(read_flo(dir.path() / "missing.flo"), std::runtime_error);
}

TEST(FloFile, DirectoryRoundTrip) {
  testutil::TempDir dir("flowdir");
  std::mt19937_64 rng(7);
  FlowSequence s;
  for (int i = 0; i < 3; ++i) {
    s.fw.push_back(random_flow(4, 5, rng, 2.0));
    s.bw.push_back(random_flow(4, 5, rng, 2.0));
  }
  write_flow_dir(dir.path(), s);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "flow_fw" / "00003.flo"));
  const auto back = read_flow_dir(dir.path(), 3);
  EXPECT_EQ(back.fw, s.fw);
  EXPECT_EQ(back.bw, s.bw);
  EXPECT_THROW(read_flow_dir(dir.path(), 4), FormatError);
}
