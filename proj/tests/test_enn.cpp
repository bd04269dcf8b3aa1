#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evifuse/enn.hpp"
#include "evifuse/error.hpp"
#include "evifuse_verify/checks.hpp"
#include "evifuse_verify/oracles.hpp"

using namespace evifuse;

namespace {

EnnParameters random_params(int I, int K, int H, std::uint64_t seed) {
  verify::Sampler rng(seed);
  EnnParameters p = init_enn(I, K, H, seed);
  for (double& v : p.prototypes) v = 2.0 * rng.uniform() - 1.0;
  for (double& v : p.alpha) v = 0.1 + 0.8 * rng.uniform();
  for (double& v : p.gamma) v = 0.2 + rng.uniform();
  for (int i = 0; i < I; ++i) {
    const auto row = rng.simplex(K, false);
    std::copy(row.begin(), row.end(), p.memberships.begin() + i * K);
  }
  return p;
}

std::vector<double> forward_vec(std::span<const double> x, const EnnParameters& p) {
  std::vector<double> out(static_cast<std::size_t>(p.classes + 1));
  enn_forward_into(x, p, out);
  return out;
}

double weighted(std::span<const double> x, const EnnParameters& p, std::span<const double> u) {
  const auto out = forward_vec(x, p);
  return std::inner_product(out.begin(), out.end(), u.begin(), 0.0);
}

}  // namespace

TEST(Activation, Examples) {
  EnnParameters p;
  p.prototypes_count = 1;
  p.feature_dim = 2;
  p.classes = 2;
  p.prototypes = {0.0, 0.0};
  p.alpha = {1.0};
  p.gamma = {0.01};
  p.memberships = {0.5, 0.5};
  const std::vector<double> x{1.0, 0.0};
  EXPECT_DOUBLE_EQ(prototype_activation(x, p)[0], std::exp(-0.01));

  p.alpha = {0.5};
  EXPECT_EQ(prototype_activation(std::vector<double>{0.0, 0.0}, p)[0], 0.5);
  EXPECT_LT(prototype_activation(std::vector<double>{1e3, 1e3}, p)[0], 1e-300);
}

TEST(PrototypeMass, Examples) {
  const auto a = prototype_mass(0.5, std::vector<double>{1.0, 0.0});
  EXPECT_EQ(a.singleton_mass(0), 0.5);
  EXPECT_EQ(a.singleton_mass(1), 0.0);
  EXPECT_EQ(a.theta_mass(), 0.5);

  const auto v = prototype_mass(0.0, std::vector<double>{0.3, 0.7});
  EXPECT_EQ(v.theta_mass(), 1.0);

  const auto b = prototype_mass(0.8, std::vector<double>{0.25, 0.75});
  EXPECT_NEAR(b.singleton_mass(0), 0.2, 1e-15);
  EXPECT_NEAR(b.singleton_mass(1), 0.6, 1e-15);
  EXPECT_NEAR(b.theta_mass(), 0.2, 1e-15);
}

TEST(Forward, SinglePrototypeEqualsPrototypeMass) {
  const auto p = random_params(1, 3, 2, 1);
  const std::vector<double> x{0.3, -0.2};
  const double s = prototype_activation(x, p)[0];
  const auto expected = prototype_mass(s, p.membership_row(0));
  const auto out = forward_vec(x, p);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(out[static_cast<std::size_t>(k)], expected.singleton_mass(k), 1e-15);
  EXPECT_NEAR(out[3], expected.theta_mass(), 1e-15);
}

TEST(Forward, ZeroActivationsGiveVacuous) {
  auto p = random_params(4, 3, 2, 2);
  std::fill(p.alpha.begin(), p.alpha.end(), 0.0);
  const auto out = forward_vec(std::vector<double>{0.1, 0.2}, p);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.0, 0.0, 1.0}));
}

TEST(Forward, MatchesDempsterOracle) {
  for (int K = 2; K <= 4; ++K) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_params(1 + trial % 5, K, 3, 100 + static_cast<std::uint64_t>(trial * 7 + K));
      verify::Sampler rng(static_cast<std::uint64_t>(trial));
      std::vector<double> x(3);
      for (double& v : x) v = 2.0 * rng.uniform() - 1.0;
      const auto out = forward_vec(x, p);
      const auto dense = oracle::enn_forward(x, p);
      double sum = 0.0;
      for (int k = 0; k < K; ++k) {
        EXPECT_NEAR(out[static_cast<std::size_t>(k)], dense[1u << k], 1e-12);
        EXPECT_GE(out[static_cast<std::size_t>(k)], 0.0);
        sum += out[static_cast<std::size_t>(k)];
      }
      EXPECT_NEAR(out[static_cast<std::size_t>(K)], dense[oracle::full_mask(K)], 1e-12);
      EXPECT_GT(out[static_cast<std::size_t>(K)], 0.0);
      EXPECT_NEAR(sum + out[static_cast<std::size_t>(K)], 1.0, 1e-12);
    }
  }
}

TEST(Forward, TwoPrototypesEqualLiftedCombination) {
  const auto p = random_params(2, 2, 2, 3);
  const std::vector<double> x{0.4, 0.1};
  const auto s = prototype_activation(x, p);
  const auto a = prototype_mass(s[0], p.membership_row(0)).to_mass_function();
  const auto b = prototype_mass(s[1], p.membership_row(1)).to_mass_function();
  const auto c = dempster_combine(a, b).mass;
  const auto out = forward_vec(x, p);
  EXPECT_NEAR(out[0], c.mass(Subset::singleton(0)), 1e-12);
  EXPECT_NEAR(out[1], c.mass(Subset::singleton(1)), 1e-12);
  EXPECT_NEAR(out[2], c.mass(Subset::full(2)), 1e-12);
}

TEST(Forward, PermutationEquivariant) {
  const int I = 6, K = 3, H = 2;
  const auto p = random_params(I, K, H, 4);
  std::vector<int> order(I);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(order.begin(), order.end(), rng);
  EnnParameters q = p;
  for (int i = 0; i < I; ++i) {
    const int j = order[static_cast<std::size_t>(i)];
    for (int h = 0; h < H; ++h) q.prototypes[static_cast<std::size_t>(i * H + h)] = p.prototypes[static_cast<std::size_t>(j * H + h)];
    for (int k = 0; k < K; ++k) q.memberships[static_cast<std::size_t>(i * K + k)] = p.memberships[static_cast<std::size_t>(j * K + k)];
    q.alpha[static_cast<std::size_t>(i)] = p.alpha[static_cast<std::size_t>(j)];
    q.gamma[static_cast<std::size_t>(i)] = p.gamma[static_cast<std::size_t>(j)];
  }
  const std::vector<double> x{-0.3, 0.5};
  const auto a = forward_vec(x, p);
  const auto b = forward_vec(x, q);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Backward, ZeroUpstreamGivesZero) {
  const auto p = random_params(3, 2, 2, 6);
  const auto g = enn_backward(std::vector<double>{0.1, 0.2}, p, std::vector<double>(3, 0.0));
  for (const auto* v : {&g.input, &g.prototypes, &g.alpha, &g.gamma, &g.memberships}) {
    for (double x : *v) EXPECT_EQ(x, 0.0);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  const int I = 3, K = 2, H = 2;
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_params(I, K, H, 10 + seed);
    verify::Sampler rng(seed);
    std::vector<double> x(H), u(K + 1);
    for (double& v : x) v = 2.0 * rng.uniform() - 1.0;
    for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
    const auto g = enn_backward(x, p, u);

    auto check_block = [&](std::vector<double> EnnParameters::*field, const std::vector<double>& grad) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        auto f = [&](std::span<const double> values) {
          EnnParameters q = p;
          std::copy(values.begin(), values.end(), (q.*field).begin());
          return weighted(x, q, u);
        };
        const double fd = oracle::central_difference(f, p.*field, i, h);
        EXPECT_LT(oracle::relative_error(grad[i], fd), 1e-4) << "entry " << i;
      }
    };
    check_block(&EnnParameters::prototypes, g.prototypes);
    check_block(&EnnParameters::alpha, g.alpha);
    check_block(&EnnParameters::gamma, g.gamma);
    check_block(&EnnParameters::memberships, g.memberships);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto f = [&](std::span<const double> xs) { return weighted(xs, p, u); };
      EXPECT_LT(oracle::relative_error(g.input[i], oracle::central_difference(f, x, i, h)), 1e-4);
    }
  }
}

TEST(Backward, TangentRowsSumToZero) {
  const auto p = random_params(3, 4, 2, 7);
  const auto g = enn_backward(std::vector<double>{0.2, 0.3}, p, std::vector<double>{0.1, -0.4, 0.3, 0.9, -0.2});
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += g.memberships_tangent[static_cast<std::size_t>(i * 4 + k)];
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
}

TEST(Backward, GammaGradientVanishesWithActivation) {
  auto p = random_params(2, 2, 1, 8);
  p.prototypes = {0.0, 50.0};
  const auto g = enn_backward(std::vector<double>{0.0}, p, std::vector<double>{1.0, -1.0, 0.5});
  EXPECT_EQ(g.gamma[1], 0.0);
}

TEST(Init, DefaultsAndDeterminism) {
  const auto a = init_enn(10, 3, 4, 42);
  const auto b = init_enn(10, 3, 4, 42);
  EXPECT_EQ(a, b);
  for (double v : a.alpha) EXPECT_EQ(v, 0.5);
  for (double v : a.gamma) EXPECT_EQ(v, 0.01);
  for (int i = 0; i < 10; ++i) {
    const auto row = a.membership_row(i);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-15);
  }
  EXPECT_NO_THROW(a.validate());
  EXPECT_NE(init_enn(10, 3, 4, 43).prototypes, a.prototypes);
}

TEST(Cost, LinearInPrototypesTimesWidth) {
  std::vector<double> ratios;
  for (auto [I, H, K] : {std::tuple{2, 2, 2}, std::tuple{10, 8, 3}, std::tuple{40, 32, 6}}) {
    const auto p = init_enn(I, K, H, 1);
    std::vector<double> x(static_cast<std::size_t>(H), 0.1), out(static_cast<std::size_t>(K + 1));
    OpCount count;
    enn_forward_into(x, p, out, &count);
    ratios.push_back(static_cast<double>(count.operations) / (I * (H + K)));
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  EXPECT_GT(*lo, 0.0);
  EXPECT_LT(*hi / *lo, 2.0);
}

TEST(Validate, RejectsBadRows) {
  auto p = init_enn(2, 2, 2, 1);
  p.memberships[0] = 0.9;
  p.memberships[1] = 0.9;
  EXPECT_THROW(p.validate(), Error);
  p = init_enn(2, 2, 2, 1);
  p.gamma[0] = 0.0;
  EXPECT_THROW(p.validate(), Error);
}
