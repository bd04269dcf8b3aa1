#include "evifuse_verify/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "evifuse/error.hpp"
#include "evifuse/metrics.hpp"
#include "evifuse/model.hpp"
#include "evifuse_verify/oracles.hpp"

namespace evifuse::verify {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

double mass_gap(const MassFunction& m, const oracle::Dense& d) {
  double gap = 0.0;
  for (std::uint32_t a = 0; a < d.size(); ++a) gap = std::max(gap, std::abs(m.mass(Subset(a)) - d[a]));
  return gap;
}

double mass_gap(const MassFunction& a, const MassFunction& b) {
  return mass_gap(a, oracle::to_dense(b));
}

double vector_gap(std::span<const double> a, std::span<const double> b) {
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a[i] - b[i]));
  return gap;
}

CheckResult verdict(int criterion, std::string name, bool passed, std::string detail) {
  return CheckResult{criterion, std::move(name), passed, std::move(detail)};
}

}  // namespace

std::string format(const CheckResult& r) {
  return std::string(r.passed ? "PASS" : "FAIL") + " criterion " + std::to_string(r.criterion) + " (" + r.name +
         "): " + r.detail;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(std::uint64_t seed) : rng_(seed) {}

double Sampler::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

int Sampler::integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

std::vector<double> Sampler::simplex(int n, bool allow_zeros) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(static_cast<std::size_t>(n));
  double total = 0.0;
  for (auto& v : w) {
    v = (allow_zeros && uniform() < 0.1) ? 0.0 : expo(rng_);
    total += v;
  }
  if (total == 0.0) {
    w.back() = 1.0;
    total = 1.0;
  }
  for (auto& v : w) v /= total;
  return w;
}

SimpleMassFunction Sampler::simple_mass(const Frame& frame) {
  const int K = frame.size();
  // the frame entry is never zeroed so pairs always combine
  auto w = simplex(K, true);
  const double theta = std::max(uniform(), 1e-3);
  for (auto& v : w) v *= 1.0 - theta;
  double singles = 0.0;
  for (double v : w) singles += v;
  return SimpleMassFunction(frame, w, 1.0 - singles);
}

MassFunction Sampler::general_mass(const Frame& frame, int max_focal) {
  const int K = frame.size();
  const int n = integer(1, max_focal);
  const auto w = simplex(n + 1, false);
  MassFunction::FocalMap focal;
  for (int i = 0; i < n; ++i) {
    const auto bits = static_cast<std::uint32_t>(integer(1, (1 << K) - 2));
    focal[Subset(bits)] += w[static_cast<std::size_t>(i)];
  }
  focal[Subset::full(K)] += w.back();
  return MassFunction(frame, std::move(focal));
}

MassFunction Sampler::mass_within(const Frame& frame, Subset a, int max_focal) {
  const int n = integer(1, max_focal);
  const auto w = simplex(n + 1, false);
  MassFunction::FocalMap focal;
  for (int i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    while (bits == 0) bits = static_cast<std::uint32_t>(integer(1, (1 << frame.size()) - 1)) & a.bits();
    focal[Subset(bits)] += w[static_cast<std::size_t>(i)];
  }
  focal[a] += w.back();
  return MassFunction(frame, std::move(focal));
}

std::vector<double> Sampler::betas(int K) {
  std::vector<double> b(static_cast<std::size_t>(K));
  for (auto& v : b) {
    const double r = uniform();
    v = r < 0.05 ? 0.0 : r < 0.1 ? 1.0 : uniform();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Checks

CheckResult check_example_one() {
  const Frame frame({"theta1", "theta2"});
  const MassFunction m(frame, {{Subset::singleton(0), 0.7}, {Subset::singleton(1), 0.2}, {Subset::full(2), 0.1}});
  const ReliabilityVector beta(frame, {1.0, 0.6});
  const auto discounted = contextual_discount(m, beta);
  const auto pl = contextual_discount_contour(contour(m), beta);
  const auto pl_full = contour(discounted);
  const double expected_mass[] = {0.42, 0.2, 0.38};
  const double expected_pl[] = {0.8, 0.58};
  double gap = std::abs(discounted.mass(Subset::singleton(0)) - expected_mass[0]);
  gap = std::max(gap, std::abs(discounted.mass(Subset::singleton(1)) - expected_mass[1]));
  gap = std::max(gap, std::abs(discounted.mass(Subset::full(2)) - expected_mass[2]));
  for (int k = 0; k < 2; ++k) {
    gap = std::max(gap, std::abs(pl[k] - expected_pl[k]));
    gap = std::max(gap, std::abs(pl_full[k] - expected_pl[k]));
  }
  return verdict(1, "contextual discount worked example", gap <= kExactTolerance,
                 "max deviation " + sci(gap) + " (tolerance 1e-12)");
}

CheckResult check_contour_shortcut(std::uint64_t seed, int trials_per_k) {
  Sampler s(seed);
  double gap = 0.0;
  int trials = 0;
  for (int K = 2; K <= 4; ++K) {
    const Frame frame = Frame::indexed(K);
    for (int i = 0; i < trials_per_k; ++i, ++trials) {
      const auto a = s.simple_mass(frame);
      const auto b = s.simple_mass(frame);
      const auto general = dempster_combine(a.to_mass_function(), b.to_mass_function());
      const auto full = contour(general.mass);
      const auto shortcut = combine_contours(contour(a), contour(b), general.conflict);
      const auto dense = oracle::dempster(oracle::to_dense(a.to_mass_function()), oracle::to_dense(b.to_mass_function()));
      const auto pl_oracle = oracle::contour(dense.mass, K);
      gap = std::max(gap, vector_gap(full.values(), shortcut.values()));
      gap = std::max(gap, vector_gap(shortcut.values(), pl_oracle));
      gap = std::max(gap, std::abs(general.conflict - dense.conflict));
    }
  }
  return verdict(2, "contour shortcut vs powerset oracle", gap <= kOracleTolerance,
                 std::to_string(trials) + " pairs over K=2..4, max deviation " + sci(gap) + " (tolerance 1e-9)");
}

CheckResult check_contextual_discount(std::uint64_t seed, int trials_per_k) {
  Sampler s(seed);
  double gap = 0.0;
  int invalid = 0;
  int trials = 0;
  for (int K = 2; K <= 4; ++K) {
    const Frame frame = Frame::indexed(K);
    for (int i = 0; i < trials_per_k; ++i, ++trials) {
      const auto m = s.general_mass(frame);
      const auto b = s.betas(K);
      const ReliabilityVector beta(frame, b);
      const auto discounted = contextual_discount(m, beta);
      if (!validate(discounted).ok()) ++invalid;
      const auto shortcut = contextual_discount_contour(contour(m), beta);
      gap = std::max(gap, vector_gap(contour(discounted).values(), shortcut.values()));
      gap = std::max(gap, mass_gap(discounted, oracle::contextual_discount(oracle::to_dense(m), b)));
    }
  }
  return verdict(3, "contextual discount contour vs enumeration oracle", gap <= kOracleTolerance && invalid == 0,
                 std::to_string(trials) + " instances over K=2..4, max deviation " + sci(gap) + ", " +
                     std::to_string(invalid) + " invalid outputs");
}

CheckResult check_gradients(std::uint64_t seed) {
  Sampler s(seed);
  const Frame frame = Frame::indexed(2);
  ModelConfig config;
  config.prototypes = 2;
  config.features = 2;
  config.hidden = 3;
  config.radius = 1;
  const int channels[] = {1, 1};
  Model model = init_model(config, frame, {"A", "B"}, channels, seed);
  for (int t = 0; t < 2; ++t) {
    auto& e = model.enn(t);
    for (auto& a : e.alpha) a = 0.2 + 0.6 * s.uniform();
    for (auto& g : e.gamma) g = 0.3 + 1.2 * s.uniform();
  }
  std::vector<double> raw(4);
  for (auto& r : raw) r = 3.0 * s.uniform() - 1.5;
  model.reliability().set_raw(raw);

  LabeledExample ex;
  ex.labels = LabelGrid(4, 4);
  for (std::size_t n = 0; n < ex.labels.voxels(); ++n) ex.labels.labels[n] = static_cast<std::uint16_t>(n % 3 == 0);
  for (int t = 0; t < 2; ++t) {
    ModalityImage img(4, 4, 1);
    for (std::size_t n = 0; n < img.voxels(); ++n) img.data[n] = 0.8 * ex.labels.labels[n] + 0.5 * (s.uniform() - 0.5);
    ex.images.push_back(std::move(img));
  }

  ModelGradient grad = ModelGradient::zeros(model);
  loss_and_gradient(model, ex, &grad);

  struct Group {
    std::string name;
    std::vector<double> analytic;
    std::function<double&(Model&, std::size_t)> entry;  // nullptr for extractor groups
    int extractor = -1;
  };
  std::vector<Group> groups;
  for (int t = 0; t < 2; ++t) {
    const auto tu = static_cast<std::size_t>(t);
    const std::string tag = t == 0 ? "A" : "B";
    groups.push_back({"extractor " + tag, grad.extractors[tu], nullptr, t});
    groups.push_back({"prototypes " + tag, grad.enns[tu].prototypes,
                      [t](Model& m, std::size_t i) -> double& { return m.enn(t).prototypes[i]; }});
    groups.push_back({"alpha " + tag, grad.enns[tu].alpha,
                      [t](Model& m, std::size_t i) -> double& { return m.enn(t).alpha[i]; }});
    groups.push_back({"gamma " + tag, grad.enns[tu].gamma,
                      [t](Model& m, std::size_t i) -> double& { return m.enn(t).gamma[i]; }});
    groups.push_back({"memberships " + tag, grad.enns[tu].memberships,
                      [t](Model& m, std::size_t i) -> double& { return m.enn(t).memberships[i]; }});
  }
  groups.push_back({"raw beta", grad.beta_raw, nullptr, -1});

  auto loss_of = [&ex](const Model& m) { return loss_and_gradient(m, ex).total(); };
  double worst = 0.0;
  std::string worst_group;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.analytic.size(); ++i) {
      auto eval = [&](double delta) {
        Model m = model;
        if (g.entry) {
          g.entry(m, i) += delta;
        } else if (g.extractor >= 0) {
          auto p = m.extractor(g.extractor).parameters();
          p[i] += delta;
          m.extractor(g.extractor).set_parameters(p);
        } else {
          std::vector<double> r(m.reliability().raw().begin(), m.reliability().raw().end());
          r[i] += delta;
          m.reliability().set_raw(r);
        }
        return loss_of(m);
      };
      const double numeric = (eval(kGradientStep) - eval(-kGradientStep)) / (2.0 * kGradientStep);
      const double err = oracle::relative_error(g.analytic[i], numeric);
      if (err > worst) {
        worst = err;
        worst_group = g.name;
      }
    }
  }
  return verdict(4, "analytic vs central-difference gradients", worst < kGradientTolerance,
                 "4x4 grid, T=2, K=2, I=2, h=1e-5, max relative error " + sci(worst) +
                     (worst_group.empty() ? "" : " (" + worst_group + ")"));
}

namespace {

ProbabilityMap strip(int width, int classes) {
  ProbabilityMap p;
  p.width = width;
  p.height = 1;
  p.classes = classes;
  p.values.assign(static_cast<std::size_t>(width * classes), 0.0);
  return p;
}

}  // namespace

CheckResult check_metric_units() {
  std::vector<std::string> failures;
  // TP=5, FP=2, FN=3 on a 10-voxel strip.
  LabelGrid truth(10, 1), pred(10, 1);
  const int t_bits[] = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  const int p_bits[] = {1, 1, 1, 1, 1, 0, 0, 0, 1, 1};
  for (int i = 0; i < 10; ++i) {
    truth.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(t_bits[i]);
    pred.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(p_bits[i]);
  }
  if (dice_from_counts({5, 2, 3}) != 2.0 / 3.0) failures.push_back("dice_from_counts");
  if (dice_score(pred, truth, std::uint16_t{1}) != 2.0 / 3.0) failures.push_back("dice_score");

  auto perfect = strip(10, 2);
  for (int i = 0; i < 10; ++i) perfect.values[static_cast<std::size_t>(i * 2 + t_bits[i])] = 1.0;
  const auto whole = EvaluationRegion::whole(truth.width, truth.height);
  if (brier(perfect, truth, whole) != 0.0) failures.push_back("brier(perfect)");
  if (nll(perfect, truth, whole) != 0.0) failures.push_back("nll(perfect)");

  // 20 voxels: 5 at confidence 0.95 (4 right), 5 at 0.75 (4 right), 10 at 0.55 (5 right).
  LabelGrid labels(20, 1);
  auto probs = strip(20, 2);
  int voxel = 0;
  auto put = [&](double conf, int count, int correct) {
    for (int j = 0; j < count; ++j, ++voxel) {
      const auto v = static_cast<std::size_t>(voxel);
      probs.values[v * 2] = conf;
      probs.values[v * 2 + 1] = 1.0 - conf;
      labels.labels[v] = j < correct ? 0 : 1;
    }
  };
  put(0.95, 5, 4);
  put(0.75, 5, 4);
  put(0.55, 10, 5);
  const double expected = 0.25 * 0.15 + 0.25 * 0.05 + 0.5 * 0.05;
  const double got = ece(probs, labels, EvaluationRegion::whole(labels.width, labels.height));
  if (std::abs(got - expected) > kExactTolerance) failures.push_back("ece(20-voxel) = " + sci(got));

  std::string detail = failures.empty() ? "dice 2/3 exact, brier/nll 0 on perfect input, 20-voxel ECE " + sci(got)
                                        : "failed:";
  for (const auto& f : failures) detail += " " + f;
  return verdict(8, "metric unit checks", failures.empty(), detail);
}

CheckResult check_ece_zero() {
  // Dyadic confidences with matching accuracies: every bin gap is exactly zero.
  LabelGrid labels(20, 1);
  auto probs = strip(20, 2);
  int voxel = 0;
  auto put = [&](double conf, int count, int correct) {
    for (int j = 0; j < count; ++j, ++voxel) {
      const auto v = static_cast<std::size_t>(voxel);
      probs.values[v * 2] = conf;
      probs.values[v * 2 + 1] = 1.0 - conf;
      labels.labels[v] = j < correct ? 0 : 1;
    }
  };
  put(0.5, 4, 2);
  put(0.75, 4, 3);
  put(1.0, 4, 4);
  put(0.625, 8, 5);
  const double got = ece(probs, labels, EvaluationRegion::whole(labels.width, labels.height));
  return verdict(7, "ece of a perfectly calibrated input", got == 0.0, "ece = " + sci(got) + " (expected exactly 0)");
}

CheckResult check_algebraic_laws(std::uint64_t seed, int trials) {
  Sampler s(seed);
  double gap = 0.0;
  int failures = 0;
  for (int i = 0; i < trials; ++i) {
    const int K = s.integer(2, 4);
    const Frame frame = Frame::indexed(K);
    const auto m1 = s.general_mass(frame);
    const auto m2 = s.general_mass(frame);
    const auto ab = dempster_combine(m1, m2);
    const auto ba = dempster_combine(m2, m1);
    double g = std::max(mass_gap(ab.mass, ba.mass), std::abs(ab.conflict - ba.conflict));

    const auto neutral = dempster_combine(m1, MassFunction::vacuous(frame));
    g = std::max({g, mass_gap(neutral.mass, m1), std::abs(neutral.conflict)});

    const Subset a(static_cast<std::uint32_t>(s.integer(1, (1 << K) - 1)));
    const auto m0 = s.mass_within(frame, a);
    const auto back = condition(conditional_embed(m0, a), a);
    g = std::max(g, mass_gap(back, m0));

    if (g > kOracleTolerance) ++failures;
    gap = std::max(gap, g);
  }
  return verdict(9, "commutativity, vacuous neutrality, embedding round trip", failures == 0,
                 std::to_string(trials) + " trials, " + std::to_string(failures) + " failures, max deviation " +
                     sci(gap));
}

std::vector<CheckResult> run_fast_checks(std::uint64_t seed) {
  return {check_example_one(),
          check_contour_shortcut(seed),
          check_contextual_discount(seed + 1),
          check_gradients(seed + 2),
          check_ece_zero(),
          check_metric_units(),
          check_algebraic_laws(seed + 3)};
}

}  // namespace evifuse::verify
