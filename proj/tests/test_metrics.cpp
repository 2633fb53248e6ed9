#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "oracles.hpp"
#include "plainusr/bench.hpp"
#include "plainusr/init.hpp"
#include "plainusr/profile.hpp"
#include "plainusr/quality.hpp"

using namespace plainusr;

namespace {

ModelConfig baseline_b() {
  auto cfg = ModelConfig::preset("B");
  cfg.lia.enabled = false;
  return cfg;
}

std::vector<double> channel(const Tensor4<double>& x, std::size_t n, std::size_t c) {
  const auto s = x.shape();
  std::vector<double> p;
  for (std::size_t i = 0; i < s.h; ++i)
    for (std::size_t j = 0; j < s.w; ++j) p.push_back(x(n, c, i, j));
  return p;
}

}  // namespace

TEST(Profile, SingleConvFootprint) {
  auto m = fuse_model(build_model<float>(baseline_b(), 0, InitMode::zeros));
  const auto r = profile(m, 256, 256);
  const auto it = std::find_if(r.layers.begin(), r.layers.end(), [](auto& l) { return l.name == "blocks.0.rep1"; });
  ASSERT_NE(it, r.layers.end());
  EXPECT_EQ(it->params, 36928u);
  EXPECT_EQ(it->macs, 9ull * 64 * 64 * 256 * 256);
}

TEST(Profile, BaselineCounts) {
  const auto r = profile(fuse_model(build_model<float>(baseline_b(), 0, InitMode::zeros)), 256, 256);
  // head 3->64, blocks (64,48,32,48,64) with two 3x3 convs each, tail 64->48
  const std::uint64_t hw = 256 * 256, sq = 2 * (64 * 64 + 48 * 48) * 2 + 32 * 32 * 2;
  EXPECT_EQ(r.macs, hw * (9 * 3 * 64 + 9 * sq + 9 * 64 * 48));
  EXPECT_EQ(r.activations, hw * (64 + 2 * (64 + 48 + 32 + 48 + 64) + 48));
  EXPECT_EQ(r.params, 278832u);
  EXPECT_LE(std::abs(double(r.params) - 280e3) / 280e3, 0.01);
  EXPECT_LE(std::abs(double(r.macs) - 18.34e9) / 18.34e9, 0.02);
  EXPECT_LE(std::abs(double(r.activations) - 41.09e6) / 41.09e6, 0.02);
}

TEST(Profile, TotalsMatchLayersAndParameterCount) {
  for (auto cfg : {ModelConfig::preset("B"), ModelConfig::preset("U", 2), baseline_b()}) {
    auto m = build_model<float>(cfg, 1);
    for (const auto& model : {m, fuse_model(m)}) {
      const auto r = profile(model, 48, 40);
      std::uint64_t p = 0, macs = 0, act = 0;
      for (const auto& l : r.layers) {
        p += l.params;
        macs += l.macs;
        act += l.activations;
      }
      EXPECT_EQ(r.params, p);
      EXPECT_EQ(r.macs, macs);
      EXPECT_EQ(r.activations, act);
      EXPECT_EQ(r.params, parameter_count(model));
    }
  }
}

TEST(Profile, LinearInArea) {
  for (auto cfg : {baseline_b(), ModelConfig::preset("B")}) {
    auto m = fuse_model(build_model<float>(cfg, 0, InitMode::zeros));
    const auto a = profile(m, 64, 64), b = profile(m, 64, 128), c = profile(m, 128, 128);
    EXPECT_EQ(b.macs, 2 * a.macs);
    EXPECT_EQ(b.activations, 2 * a.activations);
    EXPECT_EQ(c.macs, 4 * a.macs);
    EXPECT_EQ(b.params, a.params);
  }
}

TEST(Profile, FusedEqualsConvBaseline) {
  auto cfg = ModelConfig::preset("B");
  auto fused = profile(fuse_model(build_model<float>(cfg, 2)), 64, 96);
  cfg.block = BlockKind::conv;
  auto base = profile(build_model<float>(cfg, 2), 64, 96);
  EXPECT_EQ(fused.params, base.params);
  EXPECT_EQ(fused.macs, base.macs);
  EXPECT_EQ(fused.activations, base.activations);
  ASSERT_EQ(fused.layers.size(), base.layers.size());
  for (std::size_t i = 0; i < fused.layers.size(); ++i) EXPECT_EQ(fused.layers[i].macs, base.layers[i].macs);
}

TEST(Profile, FullModelNearReportedCost) {
  const auto r = profile(fuse_model(build_model<float>(ModelConfig::preset("B"), 0, InitMode::zeros)), 256, 256);
  EXPECT_LE(std::abs(double(r.macs) - 18.69e9) / 18.69e9, 0.02);
}

TEST(Profile, PeakMemoryMatchesMeasurement) {
  auto m = fuse_model(build_model<float>(ModelConfig::preset("S"), 3));
  Rng rng(1);
  auto x = random_tensor<float>(Shape4{1, 3, 20, 24}, rng);
  std::size_t measured = 0;
  forward_fused(m, x, &measured);
  const auto r = profile(m, 20, 24);
  EXPECT_EQ(r.peak_feature_elements, measured);
  EXPECT_EQ(r.peak_feature_bytes, 4 * measured);
}

TEST(Profile, JsonFields) {
  const auto j = profile(build_model<float>(ModelConfig::preset("U"), 0), 32, 32).to_json();
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("form"), "training");
  EXPECT_EQ(j.at("layers").front().at("name"), "head");
  for (const char* key : {"params", "macs", "activations", "peak_feature_bytes", "input", "scale"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Psnr, ClosedForm) {
  Tensor4<double> zero(Shape4{1, 3, 8, 8}, 0.0), half(Shape4{1, 3, 8, 8}, 0.5);
  EXPECT_NEAR(psnr(zero, half), 10 * std::log10(4.0), 1e-12);
  EXPECT_NEAR(psnr(zero, half), 6.0206, 1e-3);
  EXPECT_NEAR(psnr(zero, half, ColorMode::y), 6.0206, 1e-3);
  EXPECT_EQ(psnr(half, half), kPsnrCap);
}

TEST(Psnr, SymmetricAndShapeChecked) {
  Rng rng(2);
  auto a = random_tensor<float>(Shape4{2, 3, 9, 7}, rng), b = random_tensor<float>(Shape4{2, 3, 9, 7}, rng);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_EQ(psnr(a, b, ColorMode::y), psnr(b, a, ColorMode::y));
  Tensor4<float> c(Shape4{2, 3, 9, 8});
  EXPECT_THROW(psnr(a, c), ShapeError);
  Tensor4<float> gray(Shape4{2, 1, 9, 7});
  EXPECT_THROW(psnr(gray, gray, ColorMode::y), ShapeError);
}

TEST(Psnr, LumaWeights) {
  Tensor4<double> a(Shape4{1, 3, 4, 4}, 0.0), b(Shape4{1, 3, 4, 4}, 0.0);
  for (std::size_t i = 0; i < 16; ++i) b[i] = 1.0;  // pure red
  EXPECT_NEAR(mse(a, b, ColorMode::y), 0.299 * 0.299, 1e-15);
  EXPECT_NEAR(mse(a, b), 1.0 / 3.0, 1e-15);
}

TEST(Ssim, SelfSimilarityIsOne) {
  Rng rng(3);
  auto a = random_tensor<double>(Shape4{2, 3, 24, 20}, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, a, ColorMode::y), 1.0, 1e-12);
}

TEST(Ssim, BoundedAndSymmetric) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    auto a = random_tensor<double>(Shape4{1, 3, 16, 16}, rng), b = random_tensor<double>(Shape4{1, 3, 16, 16}, rng);
    const double s = ssim(a, b);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_NEAR(s, ssim(b, a), 1e-12);
  }
  auto a = random_tensor<double>(Shape4{1, 1, 16, 16}, rng);
  Tensor4<double> inv = a;
  for (auto& v : inv.data()) v = 1.0 - v;
  EXPECT_LT(ssim(a, inv), 0.0);
}

TEST(Ssim, MatchesDirectFormula) {
  Rng rng(5);
  for (int t = 0; t < 5; ++t) {
    auto a = random_tensor<double>(Shape4{1, 3, 32, 32}, rng);
    auto b = a;
    for (auto& v : b.data()) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    double want = 0;
    for (std::size_t c = 0; c < 3; ++c) want += oracle::ssim_plane(channel(a, 0, c), channel(b, 0, c), 32, 32);
    EXPECT_NEAR(ssim(a, b), want / 3, 1e-6);

    std::vector<double> ya, yb;
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      ya.push_back(0.299 * a[i] + 0.587 * a[1024 + i] + 0.114 * a[2048 + i]);
      yb.push_back(0.299 * b[i] + 0.587 * b[1024 + i] + 0.114 * b[2048 + i]);
    }
    EXPECT_NEAR(ssim(a, b, ColorMode::y), oracle::ssim_plane(ya, yb, 32, 32), 1e-6);
  }
}

TEST(Ssim, RejectsSmallImages) {
  Tensor4<float> a(Shape4{1, 3, 10, 32});
  EXPECT_THROW(ssim(a, a), ShapeError);
}

TEST(Bench, SummaryStatistics) {
  auto one = summarize({5.0});
  EXPECT_EQ(one.median_ms, 5.0);
  EXPECT_EQ(one.p95_ms, 5.0);
  auto four = summarize({4, 1, 3, 2});
  EXPECT_EQ(four.median_ms, 2.5);
  EXPECT_EQ(four.min_ms, 1.0);
  EXPECT_EQ(four.mean_ms, 2.5);
  std::vector<double> twenty;
  for (int i = 20; i >= 1; --i) twenty.push_back(i);
  EXPECT_EQ(summarize(twenty).p95_ms, 19.0);
}

TEST(Bench, WarmupExcluded) {
  int calls = 0;
  auto s = bench_callable(
      [&] {
        if (calls++ < 2) std::this_thread::sleep_for(std::chrono::milliseconds(60));
      },
      2, 3);
  EXPECT_EQ(calls, 5);
  ASSERT_EQ(s.samples_ms.size(), 3u);
  EXPECT_LT(s.median_ms, 30.0);

  calls = 0;
  auto single = bench_callable([&] { ++calls; }, 0, 1);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(single.median_ms, single.samples_ms[0]);
}

TEST(Bench, ModelHarnessRestoresThreads) {
  auto m = fuse_model(build_model<float>(ModelConfig::preset("U"), 0));
  set_num_threads(1);
  const auto r = bench(m, 16, 16, 1, 3, 2);
  EXPECT_EQ(r.stats.samples_ms.size(), 3u);
  EXPECT_EQ(r.env.threads, 2);
  EXPECT_EQ(num_threads(), 1);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("form"), "fused");
  EXPECT_TRUE(j.at("environment").contains("cpu"));
}
