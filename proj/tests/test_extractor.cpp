#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "evifuse/error.hpp"
#include "evifuse/extractor.hpp"
#include "evifuse_verify/checks.hpp"
#include "evifuse_verify/oracles.hpp"

using namespace evifuse;

namespace {

ModalityImage random_image(int w, int h, int c, std::uint64_t seed) {
  verify::Sampler rng(seed);
  ModalityImage img(w, h, c);
  for (double& v : img.data) v = 2.0 * rng.uniform() - 1.0;
  return img;
}

ExtractorParams random_params(int c, int features, int radius, int hidden, std::uint64_t seed) {
  auto p = init_extractor(c, features, radius, hidden, seed);
  verify::Sampler rng(seed + 1000);
  for (auto& layer : p.layers) {
    for (double& b : layer.bias) b = 0.2 * rng.uniform() - 0.1;
  }
  return p;
}

}  // namespace

TEST(Extract, ZeroImageZeroBiasGivesZero) {
  const auto p = init_extractor(2, 3, 1, 5, 1);
  const auto fm = extract(ModalityImage(6, 5, 2), p);
  EXPECT_EQ(fm.features, 3);
  EXPECT_EQ(fm.values.size(), 6u * 5u * 3u);
  for (double v : fm.values) EXPECT_EQ(v, 0.0);
}

TEST(Extract, IdentityLayerPassesChannels) {
  ExtractorParams p;
  p.channels = 3;
  p.radius = 0;
  DenseLayer id{3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}};
  p.layers = {id};
  const auto img = random_image(4, 3, 3, 2);
  const auto fm = extract(img, p);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      const auto v = fm.voxel(static_cast<std::size_t>(y * 4 + x));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(v[static_cast<std::size_t>(c)], img.at(c, y, x));
    }
  }
}

TEST(Extract, MatchesNaiveLoops) {
  for (int radius = 0; radius <= 2; ++radius) {
    const auto p = random_params(2, 3, radius, 4, 3 + static_cast<std::uint64_t>(radius));
    const auto img = random_image(7, 5, 2, 4);
    const auto fm = extract(img, p);
    const auto ref = oracle::extract(img, p);
    ASSERT_EQ(fm.values.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fm.values[i], ref[i], 1e-12);
  }
}

TEST(Extract, TranslationCovariantInInterior) {
  const int r = 1;
  const auto p = random_params(1, 2, r, 4, 5);
  const auto img = random_image(10, 8, 1, 6);
  ModalityImage shifted(10, 8, 1);
  const int dx = 2, dy = 1;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 10; ++x) {
      shifted.at(0, y, x) = img.at(0, std::max(y - dy, 0), std::max(x - dx, 0));
    }
  }
  const auto a = extract(img, p);
  const auto b = extract(shifted, p);
  for (int y = r; y < 8 - r - dy; ++y) {
    for (int x = r; x < 10 - r - dx; ++x) {
      const auto va = a.voxel(static_cast<std::size_t>(y * 10 + x));
      const auto vb = b.voxel(static_cast<std::size_t>((y + dy) * 10 + x + dx));
      for (int h = 0; h < 2; ++h) EXPECT_EQ(va[static_cast<std::size_t>(h)], vb[static_cast<std::size_t>(h)]);
    }
  }
}

TEST(Backward, ZeroUpstreamGivesZero) {
  const auto p = random_params(2, 2, 1, 3, 7);
  const auto img = random_image(4, 4, 2, 8);
  const auto g = extract_backward(img, p, std::vector<double>(16 * 2, 0.0), true);
  for (double v : g.params) EXPECT_EQ(v, 0.0);
  for (double v : g.input) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LastBiasGradientIsUpstreamSum) {
  const auto p = random_params(1, 2, 1, 3, 9);
  const auto img = random_image(5, 4, 1, 10);
  verify::Sampler rng(11);
  std::vector<double> u(20 * 2);
  for (double& v : u) v = rng.uniform() - 0.5;
  const auto g = extract_backward(img, p, u);
  const std::size_t last_bias = p.parameter_count() - 2;
  for (int h = 0; h < 2; ++h) {
    double s = 0.0;
    for (std::size_t n = 0; n < 20; ++n) s += u[n * 2 + static_cast<std::size_t>(h)];
    EXPECT_NEAR(g.params[last_bias + static_cast<std::size_t>(h)], s, 1e-12);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  const auto p = random_params(2, 2, 1, 3, 12);
  const auto img = random_image(4, 4, 2, 13);
  verify::Sampler rng(14);
  std::vector<double> u(16 * 2);
  for (double& v : u) v = 2.0 * rng.uniform() - 1.0;
  const auto g = extract_backward(img, p, u, true);
  const auto flat = p.flatten();
  ASSERT_EQ(g.params.size(), flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto f = [&](std::span<const double> w) {
      ExtractorParams q = p;
      q.unflatten(w);
      const auto fm = extract(img, q);
      return std::inner_product(fm.values.begin(), fm.values.end(), u.begin(), 0.0);
    };
    EXPECT_LT(oracle::relative_error(g.params[i], oracle::central_difference(f, flat, i, 1e-5)), 1e-4)
        << "parameter " << i;
  }
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    auto f = [&](std::span<const double> d) {
      ModalityImage q = img;
      std::copy(d.begin(), d.end(), q.data.begin());
      const auto fm = extract(q, p);
      return std::inner_product(fm.values.begin(), fm.values.end(), u.begin(), 0.0);
    };
    EXPECT_LT(oracle::relative_error(g.input[i], oracle::central_difference(f, img.data, i, 1e-5)), 1e-4)
        << "input " << i;
  }
}

TEST(Init, DeterministicZeroBiasScaledWeights) {
  const auto a = init_extractor(3, 4, 1, 16, 77);
  EXPECT_EQ(a, init_extractor(3, 4, 1, 16, 77));
  EXPECT_NE(a, init_extractor(3, 4, 1, 16, 78));
  for (const auto& layer : a.layers) {
    for (double b : layer.bias) EXPECT_EQ(b, 0.0);
  }
  const auto big = init_extractor(4, 8, 2, 400, 5);
  const auto& w = big.layers[0].weights;
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  const double expected = 1.0 / big.patch_size();
  EXPECT_NEAR(var / expected, 1.0, 0.05);
}

TEST(Serialization, RoundTripIsBitIdentical) {
  const auto p = random_params(2, 3, 1, 5, 15);
  std::ostringstream out;
  write_extractor(out, p);
  std::istringstream in(out.str());
  const auto back = read_extractor(in);
  EXPECT_EQ(back, p);

  PatchExtractor ex(p);
  std::ostringstream saved;
  ex.save(saved);
  std::istringstream saved_in(saved.str());
  const auto loaded = load_extractor(saved_in);
  EXPECT_EQ(loaded->kind(), "patch-mlp");
  EXPECT_EQ(loaded->parameters(), ex.parameters());
}

TEST(Validate, RejectsShapeMismatch) {
  auto p = init_extractor(2, 2, 1, 3, 1);
  p.layers[1].inputs = 4;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_THROW(extract(ModalityImage(3, 3, 1), init_extractor(2, 2, 1, 3, 1)), Error);
}
