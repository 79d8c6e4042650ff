#include <gtest/gtest.h>

#include <cmath>

#include "ffdnet/eval.hpp"
#include "test_util.hpp"

using namespace ffdnet;
using ffdnet::testing::random_tensor;

namespace {

// Two-layer network computing the identity: relu(x) - relu(-x) per sub-image.
ParameterSet<double> identity_network() {
  auto p = make_parameters<double>({2, 8, 1, 2, 1});
  auto& w0 = p.layers[0].conv.weights;  // (8, 5, 3, 3)
  auto& w1 = p.layers[1].conv.weights;  // (4, 8, 3, 3)
  for (std::size_t s = 0; s < 4; ++s) {
    w0(s, s, 1, 1) = 1.0;
    w0(4 + s, s, 1, 1) = -1.0;
    w1(s, s, 1, 1) = 1.0;
    w1(s, 4 + s, 1, 1) = -1.0;
  }
  return merge_batchnorm(p);
}

}  // namespace

TEST(Psnr, ClosedForm) {
  const Tensor4<double> a(1, 1, 4, 4, 0.0), b(1, 1, 4, 4, 0.1);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
  EXPECT_NEAR(psnr(a, b, true), 20.0 * std::log10(255.0 / 26.0), 1e-12);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
  EXPECT_THROW(psnr(a, Tensor4<double>(1, 1, 4, 5)), ContractViolation);
}

TEST(Psnr, QuantizationCanMakeImagesEqual) {
  const Tensor4<double> a(1, 1, 2, 2, 0.5), b(1, 1, 2, 2, 0.5 + 0.1 / 255);
  EXPECT_FALSE(std::isinf(psnr(a, b)));
  EXPECT_TRUE(std::isinf(psnr(a, b, true)));
}

TEST(FormatDb, Values) {
  EXPECT_EQ(format_db(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_db(29.123456), "29.1235");
}

TEST(MeanUniformMap, ConstantMapUnchanged) {
  const auto u = uniform_map(5, 7, 33);
  EXPECT_TRUE(mean_uniform_map(u).same_field(u));
  const auto g = gradient_map(4, 9, 10, 50);
  const auto m = mean_uniform_map(g);
  EXPECT_EQ(m.min(), m.max());
  EXPECT_NEAR(m.values[0] * 255, 30.0, 1e-12);
}

TEST(IdentityNetwork, IsExact) {
  const auto p = identity_network();
  CounterRng rng(1);
  const auto x = random_tensor({1, 1, 9, 11}, rng, -0.5, 1.5);
  EXPECT_EQ(denoise(p, x, uniform_map(9, 11, 40)), x);
}

TEST(SensitivitySweep, IdentityNetworkGivesFlatCurveAtNoisyPsnr) {
  const auto p = identity_network();
  CounterRng rng(2);
  const auto clean = random_tensor({1, 1, 32, 32}, rng, 0, 1);
  const EvalOptions opt{7, false, false};
  const auto pts = sensitivity_sweep(p, clean, 25.0, {0, 15, 25, 50}, opt);
  ASSERT_EQ(pts.size(), 4u);
  const double expect = psnr(clean, add_awgn(clean, NoiseSpec{uniform_map(32, 32, 25), false, 7}));
  for (const auto& pt : pts) EXPECT_EQ(pt.psnr, expect);
  EXPECT_EQ(pts[2].sigma, 25.0);
  // The expected value is near the closed form 20 log10(255 / 25).
  EXPECT_NEAR(expect, 20 * std::log10(255.0 / 25), 0.3);
}

TEST(TrueSigmaSweep, IdentityNetworkDecreasesWithNoise) {
  const auto p = identity_network();
  CounterRng rng(3);
  const auto clean = random_tensor({1, 1, 32, 32}, rng, 0, 1);
  const auto pts = true_sigma_sweep(p, clean, 25.0, {0, 10, 30, 60});
  EXPECT_TRUE(std::isinf(pts[0].psnr));
  EXPECT_GT(pts[1].psnr, pts[2].psnr);
  EXPECT_GT(pts[2].psnr, pts[3].psnr);
}

TEST(VariantNoiseReport, IdentityNetworkMatchesNoisy) {
  const auto p = identity_network();
  CounterRng rng(4);
  const auto clean = random_tensor({1, 1, 16, 24}, rng, 0, 1);
  const auto r = variant_noise_report(p, clean, gradient_map(16, 24, 5, 50), EvalOptions{9, false, false});
  EXPECT_EQ(r.psnr_matched, r.psnr_noisy);
  EXPECT_EQ(r.psnr_uniform_mean, r.psnr_noisy);
  EXPECT_TRUE(std::isfinite(r.psnr_noisy));
}

TEST(SweepOutput, CsvAndTable) {
  const std::vector<SweepPoint> pts{{5, 30.5}, {25, std::numeric_limits<double>::infinity()}};
  EXPECT_EQ(sweep_csv(pts), "input_sigma,psnr\n5,30.5000\n25,inf\n");
  EXPECT_EQ(sweep_csv(pts, "true_sigma").rfind("true_sigma,psnr\n", 0), 0u);
  const auto table = sweep_table(pts);
  EXPECT_NE(table.find("| 5            | 30.5000    |"), std::string::npos);
  EXPECT_NE(table.find("inf"), std::string::npos);
}
