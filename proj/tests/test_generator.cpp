#include "oracles.hpp"

#include "gstm/generator.hpp"

#include <gtest/gtest.h>

#include <bit>

using namespace gstm;

namespace {

uint64_t fnv1a(std::span<float const> v)
{
  uint64_t h = 1469598103934665603ull;
  for (auto const x : v) {
    auto const bits = std::bit_cast<uint32_t>(x);
    for (int b = 0; b < 4; b++) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

double sq_norm_diff(ComplexImage<double> const &a, ComplexImage<double> const &b)
{
  double s = 0.0;
  for (size_t i = 0; i < a.values.size(); i++) {
    s += std::norm(a.values[i] - b.values[i]);
  }
  return s;
}

} // namespace

TEST(Generator, FullSizePresetMatchesLayerTable)
{
  auto const p = build_generator<float>("paper340", 40, 2, 1);
  ASSERT_EQ(p.layers.size(), 10u);
  auto const &first = p.layers.front();
  EXPECT_EQ(first.in_channels, 2);
  EXPECT_EQ(first.out_channels, 100);
  EXPECT_EQ(first.kernel_size, 1);
  EXPECT_EQ(first.stride, 1);
  EXPECT_EQ(first.padding, 0);
  EXPECT_EQ(p.layers.back().out_channels, 2);
  EXPECT_EQ(p.output_size(), 340);
  EXPECT_EQ(p.activations.back(), Activation::Tanh);
  for (size_t i = 0; i + 1 < p.activations.size(); i++) {
    EXPECT_EQ(p.activations[i], Activation::LeakyRelu);
  }
}

TEST(Generator, DeskPresetProduces64x64TwoChannels)
{
  auto const p = build_generator<float>("desk64", 16, 2, 7);
  std::vector<float> const z(2, 0.0f);
  auto const tr = forward_trace(p, std::span<float const>(z));
  EXPECT_EQ(tr.output().channels, 2);
  EXPECT_EQ(tr.output().height, 64);
  EXPECT_EQ(tr.output().width, 64);
}

TEST(Generator, DeskParameterCount)
{
  auto const p = build_generator<float>("desk64", 16, 2, 7);
  Index expected = 0, cin = 2;
  for (auto const &s : preset_layers("desk64", 16)) {
    expected += cin * s.out_channels * s.kernel_size * s.kernel_size + s.out_channels;
    cin = s.out_channels;
  }
  EXPECT_EQ(p.param_count(), expected);
  EXPECT_EQ(p.param_count(), 639934);
  // Fewer weights than real values measured in the default 100-frame desk dataset.
  EXPECT_LT(p.param_count(), 100 * 64 * 64 * 2);
}

TEST(Generator, RejectsUnknownPresetAndBadSizes)
{
  EXPECT_THROW(build_generator<float>("unet", 16, 2, 1), ConfigError);
  EXPECT_THROW(build_generator<float>("desk64", 0, 2, 1), ConfigError);
  EXPECT_THROW(build_generator<float>("desk64", 16, 0, 1), ConfigError);
  auto const p = build_generator<float>("desk64", 4, 2, 1);
  std::vector<float> const z(3, 0.0f);
  EXPECT_THROW(generate_frame(p, std::span<float const>(z)), ShapeError);
}

TEST(Generator, InitialisationIsBoundedAndSeeded)
{
  auto const a = build_generator<double>("desk64", 4, 2, 99);
  auto const b = build_generator<double>("desk64", 4, 2, 99);
  auto const c = build_generator<double>("desk64", 4, 2, 100);
  EXPECT_EQ(a.layers[3].kernel, b.layers[3].kernel);
  EXPECT_NE(a.layers[3].kernel, c.layers[3].kernel);
  for (auto const &l : a.layers) {
    double const bound = std::sqrt(1.0 / double(l.in_channels * l.kernel_size * l.kernel_size));
    for (auto const v : l.kernel) {
      EXPECT_LE(std::abs(v), bound);
    }
  }
}

TEST(Generator, ZeroFinalLayerGivesZeroImage)
{
  auto p = build_generator<float>("desk64", 4, 2, 3);
  std::fill(p.layers.back().kernel.begin(), p.layers.back().kernel.end(), 0.0f);
  std::fill(p.layers.back().bias.begin(), p.layers.back().bias.end(), 0.0f);
  std::vector<float> const z{0.4f, -1.2f};
  for (auto const v : generate_frame(p, std::span<float const>(z)).values) {
    EXPECT_EQ(v, Cx<float>(0));
  }
}

TEST(Generator, DeterministicAndGolden)
{
  auto const p = build_generator<float>("desk64", 16, 2, 42);
  std::vector<float> const z{0.3f, -0.2f};
  auto const a = forward_trace(p, std::span<float const>(z));
  auto const b = forward_trace(p, std::span<float const>(z));
  EXPECT_EQ(a.output().data, b.output().data);
  // Recorded from the first build on x86-64 (float, -march=native).
  EXPECT_EQ(fnv1a(a.output().span()), 0xd5cce3da62a50d87ull) << std::hex << fnv1a(a.output().span());
}

TEST(Generator, OutputWithinTanhRange)
{
  auto const p = build_generator<float>("desk64", 8, 2, 5);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int trial = 0; trial < 5; trial++) {
    std::vector<float> const z{n(rng), n(rng)};
    for (auto const v : forward_trace(p, std::span<float const>(z)).output().data) {
      EXPECT_LE(std::abs(v), 1.0f);
    }
  }
}

TEST(GenerateBatch, ElementwiseAndOrdered)
{
  auto const p = build_generator<float>("desk64", 4, 2, 8);
  std::vector<std::vector<float>> zs{{0.1f, 0.2f}, {-0.5f, 0.9f}, {1.0f, -1.0f}};
  auto const single = generate_frame(p, std::span<float const>(zs[0]));
  EXPECT_EQ(generate_batch(p, {zs[0]}).front().values, single.values);

  auto const same = generate_batch(p, {zs[1], zs[1], zs[1]});
  EXPECT_EQ(same[0].values, same[1].values);
  EXPECT_EQ(same[1].values, same[2].values);

  auto const fwd = generate_batch(p, zs);
  auto const rev = generate_batch(p, {zs[2], zs[1], zs[0]});
  for (size_t i = 0; i < 3; i++) {
    EXPECT_EQ(fwd[i].values, rev[2 - i].values);
  }
  EXPECT_THROW(generate_batch(p, {}), ShapeError);
}

TEST(Jacobian, LinearGeneratorGivesWeightNorm)
{
  auto const p = linear_generator<double>(2, 8, 4);
  double w2 = 0.0;
  for (auto const v : p.layers[0].kernel) {
    w2 += v * v;
  }
  std::vector<double> const z{0.7, -0.3};
  for (double const h : {1e-1, 1e-3, 1.0}) {
    double const j = jacobian_frobenius_sq(p, std::span<double const>(z), h);
    EXPECT_LT(std::abs(j - w2) / w2, 1e-10) << "h=" << h;
  }
}

TEST(Jacobian, ConstantGeneratorGivesZero)
{
  auto p = build_generator<double>("desk64", 2, 2, 4);
  std::fill(p.layers[0].kernel.begin(), p.layers[0].kernel.end(), 0.0);
  std::vector<double> const z{0.5, 0.5};
  EXPECT_EQ(jacobian_frobenius_sq(p, std::span<double const>(z), 1e-3), 0.0);
}

TEST(Jacobian, StepHalvingConverges)
{
  // The network is piecewise linear, so the coarse step can straddle an activation
  // kink; the agreement is checked on the median over draws with a looser cap.
  auto const p = build_generator<double>("desk64", 16, 2, 12);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> rel;
  for (int trial = 0; trial < 10; trial++) {
    std::vector<double> const z{n(rng), n(rng)};
    double const coarse = jacobian_frobenius_sq(p, std::span<double const>(z), 1e-2);
    double const fine = jacobian_frobenius_sq(p, std::span<double const>(z), 1e-3);
    rel.push_back(std::abs(coarse - fine) / fine);
  }
  std::sort(rel.begin(), rel.end());
  EXPECT_LT((rel[4] + rel[5]) / 2, 0.01);
  EXPECT_LT(rel.back(), 0.02);
}

TEST(Jacobian, GradientMatchesFiniteDifferences)
{
  auto p = build_generator<double>("desk64", 1, 2, 17);
  std::vector<double> z{0.4, -0.8};
  double const h = 1e-3;
  GeneratorGrads<double> g(p);
  std::vector<double> dz(2, 0.0);
  jacobian_frobenius_sq_vjp(p, std::span<double const>(z), h, 1.0, g, std::span<double>(dz));
  auto f = [&] { return jacobian_frobenius_sq(p, std::span<double const>(z), h); };
  std::mt19937_64 rng(2);
  for (size_t l = 0; l < p.layers.size(); l++) {
    std::uniform_int_distribution<size_t> pick(0, p.layers[l].kernel.size() - 1);
    for (int k = 0; k < 3; k++) {
      size_t const i = pick(rng);
      double const fd = oracle::central_diff(f, p.layers[l].kernel[i], 1e-5);
      EXPECT_LT(oracle::rel_diff(g.layers[l].kernel[i], fd, 1e-6), 1e-3) << "layer " << l << " index " << i;
    }
    double const fd = oracle::central_diff(f, p.layers[l].bias[0], 1e-5);
    EXPECT_LT(oracle::rel_diff(g.layers[l].bias[0], fd, 1e-6), 1e-3) << "layer " << l << " bias";
  }
  for (size_t j = 0; j < 2; j++) {
    EXPECT_LT(oracle::rel_diff(dz[j], oracle::central_diff(f, z[j], 1e-5), 1e-6), 1e-3);
  }
}

TEST(Backward, FullChainMatchesFiniteDifferences)
{
  auto p = build_generator<double>("desk64", 2, 2, 23);
  std::vector<double> z{-0.6, 1.1};
  std::mt19937_64 rng(6);
  FeatureMap<double> cot(2, 64, 64);
  oracle::fill_uniform(cot.data, rng);
  GeneratorGrads<double> g(p);
  std::vector<double> dz(2, 0.0);
  backward(p, forward_trace(p, std::span<double const>(z)), cot, g, std::span<double>(dz));
  auto f = [&] {
    auto const out = forward_trace(p, std::span<double const>(z));
    double s = 0.0;
    for (size_t i = 0; i < cot.data.size(); i++) {
      s += cot.data[i] * out.output().data[i];
    }
    return s;
  };
  for (size_t l = 0; l < p.layers.size(); l++) {
    std::uniform_int_distribution<size_t> pick(0, p.layers[l].kernel.size() - 1);
    for (int k = 0; k < 4; k++) {
      size_t const i = pick(rng);
      double const fd = oracle::central_diff(f, p.layers[l].kernel[i], 1e-5);
      EXPECT_LT(oracle::rel_diff(g.layers[l].kernel[i], fd, 1e-6), 1e-3) << "layer " << l << " index " << i;
    }
  }
  for (size_t j = 0; j < 2; j++) {
    EXPECT_LT(oracle::rel_diff(dz[j], oracle::central_diff(f, z[j], 1e-5)), 1e-3);
  }
}

TEST(PathLength, ZeroForCoincidentEndpoints)
{
  auto const p = build_generator<double>("desk64", 2, 2, 1);
  std::vector<double> const z{0.2, 0.1};
  EXPECT_EQ(path_length(p, std::span<double const>(z), std::span<double const>(z), 8), 0.0);
  EXPECT_THROW(path_length(p, std::span<double const>(z), std::span<double const>(z), 1), ConfigError);
}

TEST(PathLength, LinearGeneratorIsStraight)
{
  auto const p = linear_generator<double>(2, 6, 9);
  std::vector<double> const z1{0.3, -1.0}, z2{-0.4, 0.25};
  double const direct =
    std::sqrt(sq_norm_diff(generate_frame(p, std::span<double const>(z1)), generate_frame(p, std::span<double const>(z2))));
  for (Index n : {2, 7, 64}) {
    EXPECT_NEAR(path_length(p, std::span<double const>(z1), std::span<double const>(z2), n), direct, 1e-12 * direct);
  }
}

TEST(PathLength, BoundedByJacobianForNearbyLatents)
{
  auto const p = build_generator<double>("desk64", 16, 2, 31);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  int violations = 0;
  for (int trial = 0; trial < 10; trial++) {
    std::vector<double> const z1{n(rng), n(rng)};
    double const ang = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
    std::vector<double> const z2{z1[0] + 0.01 * std::cos(ang), z1[1] + 0.01 * std::sin(ang)};
    std::vector<double> const mid{(z1[0] + z2[0]) / 2, (z1[1] + z2[1]) / 2};
    double const len = path_length(p, std::span<double const>(z1), std::span<double const>(z2), 64);
    double const bound = 0.01 * std::sqrt(jacobian_frobenius_sq(p, std::span<double const>(mid), 1e-3)) * 1.05;
    violations += len > bound ? 1 : 0;
  }
  EXPECT_EQ(violations, 0);
}
