#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "evifuse/dst.hpp"
#include "evifuse/error.hpp"
#include "evifuse/fusion.hpp"
#include "evifuse_verify/checks.hpp"
#include "evifuse_verify/oracles.hpp"

using namespace evifuse;

namespace {

ReliabilityMatrix betas_from(const Frame& f, int T, const std::vector<double>& beta) {
  std::vector<std::string> names;
  for (int t = 0; t < T; ++t) names.push_back("m" + std::to_string(t));
  std::vector<double> raw(beta.size());
  std::transform(beta.begin(), beta.end(), raw.begin(), squash_inverse);
  return ReliabilityMatrix(f, names, raw);
}

// Fusion with coefficients given directly, so that 0 and 1 are reachable.
std::vector<double> fuse_direct(std::span<const ContourFunction> pls, const std::vector<double>& beta) {
  const int T = static_cast<int>(pls.size());
  const int K = pls[0].frame().size();
  std::vector<double> contours, probs(static_cast<std::size_t>(K)), disc(static_cast<std::size_t>(T * K));
  for (const auto& pl : pls) contours.insert(contours.end(), pl.values().begin(), pl.values().end());
  fuse_voxel(contours, beta, T, K, probs, disc);
  return probs;
}

std::vector<ContourFunction> random_contours(verify::Sampler& rng, const Frame& f, int T) {
  std::vector<ContourFunction> out;
  for (int t = 0; t < T; ++t) out.push_back(contour(rng.simple_mass(f)));
  return out;
}

std::vector<double> random_betas(verify::Sampler& rng, int n) {
  std::vector<double> b(static_cast<std::size_t>(n));
  for (double& v : b) v = 0.05 + 0.9 * rng.uniform();
  return b;
}

}  // namespace

TEST(Squash, RoundTripAndInit) {
  EXPECT_NEAR(squash(squash_inverse(0.5)), 0.5, 1e-15);
  const auto r = init_reliability(2, 2);
  for (double b : r.beta()) EXPECT_EQ(b, 0.5);
  std::ostringstream csv;
  write_beta_csv(csv, r);
  EXPECT_NE(csv.str().find("0.500"), std::string::npos);
  std::ostringstream table;
  write_beta_table(table, r);
  std::string line;
  std::istringstream in(table.str());
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2) << line;  // name + K values
    EXPECT_NE(line.find(",0.500,0.500"), std::string::npos) << line;
  }
}

TEST(DiscountModality, Examples) {
  Frame f = Frame::indexed(2);
  ContourFunction pl(f, {0.8, 0.3});
  const auto same = discount_modality(pl, ReliabilityVector::uniform(f, 1.0));
  EXPECT_EQ(same[0], 0.8);
  EXPECT_EQ(same[1], 0.3);
  const auto gone = discount_modality(pl, ReliabilityVector::uniform(f, 0.0));
  EXPECT_EQ(gone[0], 1.0);
  EXPECT_EQ(gone[1], 1.0);
  const auto ex = discount_modality(pl, ReliabilityVector(f, {1.0, 0.6}));
  EXPECT_NEAR(ex[0], 0.8, 1e-15);
  EXPECT_NEAR(ex[1], 0.58, 1e-15);
}

TEST(Fuse, HandExample) {
  Frame f = Frame::indexed(2);
  std::vector<ContourFunction> pls{ContourFunction(f, {0.9, 0.2}), ContourFunction(f, {0.3, 0.8})};
  const auto out = fuse_direct(pls, {1.0, 1.0, 1.0, 1.0});
  EXPECT_NEAR(out[0], 0.27 / 0.43, 1e-15);
  EXPECT_NEAR(out[1], 0.16 / 0.43, 1e-15);
  EXPECT_NEAR(out[0], 0.6279, 1e-4);
}

TEST(Fuse, SingleModalityReducesToNormalization) {
  verify::Sampler rng(1);
  Frame f = Frame::indexed(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pls = random_contours(rng, f, 1);
    const auto out = fuse_direct(pls, std::vector<double>(4, 1.0));
    const auto expected = plausibility_to_probability(pls[0]);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(out[static_cast<std::size_t>(k)], expected[static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(Fuse, ZeroReliabilityRowDropsModality) {
  verify::Sampler rng(2);
  Frame f = Frame::indexed(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pls = random_contours(rng, f, 2);
    auto beta = random_betas(rng, 6);
    std::fill(beta.begin() + 3, beta.end(), 0.0);
    const auto probs = fuse_direct(pls, beta);
    const auto alone = fuse(std::vector<ContourFunction>{pls[0]}, betas_from(f, 1, {beta[0], beta[1], beta[2]}));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(probs[static_cast<std::size_t>(k)], alone.probabilities[static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(Fuse, SumsToOneAndPermutationInvariant) {
  verify::Sampler rng(3);
  Frame f = Frame::indexed(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pls = random_contours(rng, f, 3);
    const auto beta = random_betas(rng, 9);
    const auto a = fuse(pls, betas_from(f, 3, beta));
    EXPECT_NEAR(std::accumulate(a.probabilities.begin(), a.probabilities.end(), 0.0), 1.0, 1e-9);
    std::vector<ContourFunction> swapped{pls[2], pls[0], pls[1]};
    std::vector<double> beta_swapped(beta.begin() + 6, beta.end());
    beta_swapped.insert(beta_swapped.end(), beta.begin(), beta.begin() + 6);
    const auto b = fuse(swapped, betas_from(f, 3, beta_swapped));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.probabilities[static_cast<std::size_t>(k)], b.probabilities[static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(Fuse, MonotoneInOwnPlausibility) {
  verify::Sampler rng(4);
  Frame f = Frame::indexed(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto pls = random_contours(rng, f, 2);
    const auto beta = random_betas(rng, 6);
    const auto before = fuse(pls, betas_from(f, 2, beta));
    const int t = rng.integer(0, 1);
    const int k = rng.integer(0, 2);
    std::vector<double> v(pls[static_cast<std::size_t>(t)].values().begin(), pls[static_cast<std::size_t>(t)].values().end());
    v[static_cast<std::size_t>(k)] += (1.0 - v[static_cast<std::size_t>(k)]) * rng.uniform();
    pls[static_cast<std::size_t>(t)] = ContourFunction(f, v);
    const auto after = fuse(pls, betas_from(f, 2, beta));
    EXPECT_GE(after.probabilities[static_cast<std::size_t>(k)], before.probabilities[static_cast<std::size_t>(k)] - 1e-15);
  }
}

TEST(Fuse, ArgmaxInvariantToContourScaling) {
  verify::Sampler rng(5);
  Frame f = Frame::indexed(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto pls = random_contours(rng, f, 2);
    const std::vector<double> ones(8, 1.0);
    const auto a = fuse_direct(pls, ones);
    std::vector<double> v(pls[1].values().begin(), pls[1].values().end());
    const double c = 0.1 + 0.8 * rng.uniform();
    for (double& x : v) x *= c;
    pls[1] = ContourFunction(f, v);
    const auto b = fuse_direct(pls, ones);
    const auto am = std::max_element(a.begin(), a.end()) - a.begin();
    const auto bm = std::max_element(b.begin(), b.end()) - b.begin();
    EXPECT_EQ(am, bm);
  }
}

TEST(Fuse, AgreesWithDstChainAndFullMassOracle) {
  verify::Sampler rng(6);
  for (int K = 2; K <= 4; ++K) {
    Frame f = Frame::indexed(K);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<SimpleMassFunction> masses;
      for (int t = 0; t < 2; ++t) masses.push_back(rng.simple_mass(f));
      const auto beta = random_betas(rng, 2 * K);
      const auto betas = betas_from(f, 2, beta);
      std::vector<ContourFunction> pls{contour(masses[0]), contour(masses[1])};
      const auto fused = fuse(pls, betas);

      // Chain through dst-core: discount each contour, then combine.
      const auto d0 = contextual_discount_contour(pls[0], betas.row(0));
      const auto d1 = contextual_discount_contour(pls[1], betas.row(1));
      const auto d0m = contextual_discount(masses[0].to_mass_function(), betas.row(0));
      const auto d1m = contextual_discount(masses[1].to_mass_function(), betas.row(1));
      const double kappa = dempster_combine(d0m, d1m).conflict;
      const auto chained = plausibility_to_probability(combine_contours(d0, d1, kappa));

      std::vector<oracle::Dense> dense{oracle::to_dense(masses[0].to_mass_function()),
                                       oracle::to_dense(masses[1].to_mass_function())};
      const auto full = oracle::fuse(dense, betas.beta(), K);
      for (int k = 0; k < K; ++k) {
        EXPECT_NEAR(fused.probabilities[static_cast<std::size_t>(k)], chained[static_cast<std::size_t>(k)], 1e-9);
        EXPECT_NEAR(fused.probabilities[static_cast<std::size_t>(k)], full[static_cast<std::size_t>(k)], 1e-9);
      }
      EXPECT_NEAR(fusion_conflict(masses, betas), kappa, 1e-12);
    }
  }
}

TEST(FuseBackward, UniformUpstreamGivesZero) {
  verify::Sampler rng(7);
  Frame f = Frame::indexed(3);
  const auto pls = random_contours(rng, f, 2);
  const auto g = fuse_backward(pls, betas_from(f, 2, random_betas(rng, 6)), std::vector<double>(3, 0.7));
  for (double v : g.contours) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : g.beta) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(FuseBackward, FullPlausibilityGivesZeroBetaGradient) {
  Frame f = Frame::indexed(3);
  std::vector<ContourFunction> pls{ContourFunction(f, {1.0, 0.4, 0.2}), ContourFunction(f, {0.3, 0.6, 0.9})};
  const auto g = fuse_backward(pls, betas_from(f, 2, {0.3, 0.6, 0.8, 0.4, 0.5, 0.7}), std::vector<double>{0.5, -1.0, 0.25});
  EXPECT_EQ(g.beta[0], 0.0);
}

TEST(FuseBackward, MatchesFiniteDifferences) {
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    verify::Sampler rng(100 + seed);
    Frame f = Frame::indexed(3);
    std::vector<ContourFunction> pls;
    for (int t = 0; t < 2; ++t) {
      std::vector<double> v(3);
      for (double& x : v) x = 0.05 + 0.9 * rng.uniform();
      pls.emplace_back(f, v);
    }
    std::vector<double> raw(6);
    for (double& r : raw) r = 2.0 * rng.uniform() - 1.0;
    std::vector<double> u(3);
    for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
    const ReliabilityMatrix betas(f, {"a", "b"}, raw);
    const auto g = fuse_backward(pls, betas, u);

    std::vector<double> flat;
    for (const auto& pl : pls) flat.insert(flat.end(), pl.values().begin(), pl.values().end());
    auto objective = [&](std::span<const double> c, std::span<const double> r) {
      std::vector<ContourFunction> p{ContourFunction(f, {c[0], c[1], c[2]}), ContourFunction(f, {c[3], c[4], c[5]})};
      const auto out = fuse(p, ReliabilityMatrix(f, {"a", "b"}, {r.begin(), r.end()}));
      return std::inner_product(out.probabilities.begin(), out.probabilities.end(), u.begin(), 0.0);
    };
    for (std::size_t i = 0; i < 6; ++i) {
      const double fd_c = oracle::central_difference([&](std::span<const double> c) { return objective(c, raw); }, flat, i, h);
      EXPECT_LT(oracle::relative_error(g.contours[i], fd_c), 1e-4) << "contour " << i;
      const double fd_r = oracle::central_difference([&](std::span<const double> r) { return objective(flat, r); }, raw, i, h);
      EXPECT_LT(oracle::relative_error(g.raw[i], fd_r), 1e-4) << "raw beta " << i;
    }
  }
}

TEST(FuseBatch, MatchesPerVoxel) {
  verify::Sampler rng(8);
  Frame f = Frame::indexed(3);
  const std::size_t n = 37;
  std::vector<std::vector<double>> planes(2);
  std::vector<std::vector<ContourFunction>> per_voxel(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < 2; ++t) {
      const auto pl = contour(rng.simple_mass(f));
      planes[static_cast<std::size_t>(t)].insert(planes[static_cast<std::size_t>(t)].end(), pl.values().begin(), pl.values().end());
      per_voxel[i].push_back(pl);
    }
  }
  const auto betas = betas_from(f, 2, random_betas(rng, 6));
  std::vector<std::span<const double>> views{planes[0], planes[1]};
  std::vector<double> out(n * 3);
  fuse_batch(views, betas, out);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = fuse(per_voxel[i], betas);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(out[i * 3 + static_cast<std::size_t>(k)], p.probabilities[static_cast<std::size_t>(k)], 1e-14);
  }
}

TEST(Fuse, AllImplausibleThrows) {
  Frame f = Frame::indexed(2);
  std::vector<ContourFunction> pls{ContourFunction(f, {1.0, 0.0}), ContourFunction(f, {0.0, 1.0})};
  EXPECT_THROW(fuse_direct(pls, {1.0, 1.0, 1.0, 1.0}), Error);
}
