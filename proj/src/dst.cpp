#include "evifuse/dst.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "evifuse/error.hpp"

namespace evifuse {

namespace {

void require_same_frame(const Frame& a, const Frame& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorCode::FrameMismatch, std::string(what) + ": operands are defined on different frames");
  }
}

void require_general_frame(const Frame& frame) {
  if (frame.size() > kMaxGeneralFrameSize) {
    fail(ErrorCode::InvalidArgument,
         "general mass functions support at most 16 classes, got " + std::to_string(frame.size()));
  }
}

double clamp_unit(double v, const char* what) {
  if (!std::isfinite(v) || v < -kMassSumTolerance || v > 1.0 + kMassSumTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << " outside [0,1]: " << v;
    fail(ErrorCode::InvalidArgument, os.str());
  }
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

Frame::Frame(std::vector<std::string> labels) {
  if (labels.size() < 2) {
    fail(ErrorCode::InvalidArgument, "a frame needs at least two classes");
  }
  if (labels.size() > 32) {
    fail(ErrorCode::InvalidArgument, "frames are limited to 32 classes");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      if (labels[i] == labels[j]) {
        fail(ErrorCode::InvalidArgument, "duplicate frame label '" + labels[i] + "'");
      }
    }
  }
  labels_ = std::make_shared<const std::vector<std::string>>(std::move(labels));
}

Frame Frame::indexed(int k) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(std::max(k, 0)));
  for (int i = 1; i <= k; ++i) labels.push_back("theta" + std::to_string(i));
  return Frame(std::move(labels));
}

int Subset::cardinality() const noexcept { return std::popcount(bits_); }

// ---------------------------------------------------------------------------
// MassFunction

MassFunction::MassFunction(UncheckedTag, Frame frame, FocalMap masses)
    : frame_(std::move(frame)), masses_(std::move(masses)) {}

MassFunction MassFunction::unchecked(Frame frame, FocalMap masses) {
  return MassFunction(UncheckedTag{}, std::move(frame), std::move(masses));
}

MassFunction::MassFunction(Frame frame, FocalMap masses) : frame_(std::move(frame)) {
  require_general_frame(frame_);
  const Subset universe = Subset::full(frame_.size());
  double sum = 0.0;
  for (auto& [subset, value] : masses) {
    if (!subset.is_subset_of(universe)) {
      fail(ErrorCode::InvalidArgument,
           "subset bitmask " + std::to_string(subset.bits()) + " is outside the frame");
    }
    value = clamp_unit(value, "mass");
    if (subset.is_empty() && value > kMassSumTolerance) {
      fail(ErrorCode::InvalidArgument, "mass on the empty set must be zero");
    }
    if (!subset.is_empty()) sum += value;
  }
  if (std::abs(sum - 1.0) > kRenormalizeTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "masses sum to " << sum << ", expected 1";
    fail(ErrorCode::InvalidArgument, os.str());
  }
  // Values already summing to 1 within rounding are stored as given.
  const double scale = std::abs(sum - 1.0) > kMassSumTolerance ? sum : 1.0;
  for (const auto& [subset, value] : masses) {
    if (!subset.is_empty() && value > 0.0) masses_.emplace(subset, value / scale);
  }
}

MassFunction MassFunction::vacuous(Frame frame) {
  const Subset theta = Subset::full(frame.size());
  return MassFunction(std::move(frame), FocalMap{{theta, 1.0}});
}

MassFunction MassFunction::categorical(Frame frame, Subset focal) {
  if (focal.is_empty()) fail(ErrorCode::InvalidArgument, "categorical mass on the empty set");
  return MassFunction(std::move(frame), FocalMap{{focal, 1.0}});
}

double MassFunction::mass(Subset a) const {
  auto it = masses_.find(a);
  return it == masses_.end() ? 0.0 : it->second;
}

// ---------------------------------------------------------------------------
// Simple family, contours, reliabilities

SimpleMassFunction::SimpleMassFunction(Frame frame, std::vector<double> singleton_masses,
                                       double theta_mass)
    : frame_(std::move(frame)), singletons_(std::move(singleton_masses)) {
  if (static_cast<int>(singletons_.size()) != frame_.size()) {
    fail(ErrorCode::DimensionMismatch, "simple mass function needs one mass per class");
  }
  double sum = 0.0;
  for (double& v : singletons_) {
    v = clamp_unit(v, "singleton mass");
    sum += v;
  }
  theta_ = clamp_unit(theta_mass, "frame mass");
  sum += theta_;
  if (std::abs(sum - 1.0) > kRenormalizeTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << "simple masses sum to " << sum << ", expected 1";
    fail(ErrorCode::InvalidArgument, os.str());
  }
  for (double& v : singletons_) v /= sum;
  theta_ /= sum;
}

SimpleMassFunction SimpleMassFunction::vacuous(Frame frame) {
  std::vector<double> zeros(static_cast<std::size_t>(frame.size()), 0.0);
  return SimpleMassFunction(std::move(frame), std::move(zeros), 1.0);
}

MassFunction SimpleMassFunction::to_mass_function() const {
  MassFunction::FocalMap map;
  for (int k = 0; k < frame_.size(); ++k) {
    if (singletons_[static_cast<std::size_t>(k)] > 0.0) {
      map.emplace(Subset::singleton(k), singletons_[static_cast<std::size_t>(k)]);
    }
  }
  if (theta_ > 0.0) map[Subset::full(frame_.size())] += theta_;
  return MassFunction(frame_, std::move(map));
}

ContourFunction::ContourFunction(Frame frame, std::vector<double> pl)
    : frame_(std::move(frame)), pl_(std::move(pl)) {
  if (static_cast<int>(pl_.size()) != frame_.size()) {
    fail(ErrorCode::DimensionMismatch, "contour function needs one value per class");
  }
  for (double& v : pl_) v = clamp_unit(v, "plausibility");
}

ReliabilityVector::ReliabilityVector(Frame frame, std::vector<double> beta)
    : frame_(std::move(frame)), beta_(std::move(beta)) {
  if (static_cast<int>(beta_.size()) != frame_.size()) {
    fail(ErrorCode::DimensionMismatch, "reliability vector needs one coefficient per class");
  }
  for (double v : beta_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "reliability coefficient outside [0,1]");
    }
  }
}

ReliabilityVector ReliabilityVector::uniform(Frame frame, double beta) {
  std::vector<double> values(static_cast<std::size_t>(frame.size()), beta);
  return ReliabilityVector(std::move(frame), std::move(values));
}

// ---------------------------------------------------------------------------
// Operations

ValidationReport validate(const MassFunction& m) {
  ValidationReport report;
  const int k = m.frame().size();
  if (k > kMaxGeneralFrameSize) {
    report.violations.push_back("frame has " + std::to_string(k) + " classes, limit is 16");
  }
  const Subset universe = Subset::full(k);
  double sum = 0.0;
  for (const auto& [subset, value] : m.focal_sets()) {
    if (!subset.is_subset_of(universe)) {
      report.violations.push_back("subset " + std::to_string(subset.bits()) +
                                  " is outside the frame");
    }
    if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
      report.violations.push_back("mass of subset " + std::to_string(subset.bits()) +
                                  " is outside [0,1]");
    }
    if (subset.is_empty() && value != 0.0) {
      report.violations.push_back("m(empty) != 0");
    }
    sum += value;
  }
  if (!(std::abs(sum - 1.0) <= kMassSumTolerance)) {
    std::ostringstream os;
    os.precision(17);
    os << "sum != 1 (sum of masses is " << sum << ")";
    report.violations.push_back(os.str());
  }
  return report;
}

double belief(const MassFunction& m, Subset a) {
  double bel = 0.0;
  for (const auto& [b, value] : m.focal_sets()) {
    if (!b.is_empty() && b.is_subset_of(a)) bel += value;
  }
  return bel;
}

double plausibility(const MassFunction& m, Subset a) {
  double pl = 0.0;
  for (const auto& [b, value] : m.focal_sets()) {
    if (b.intersects(a)) pl += value;
  }
  return pl;
}

ContourFunction contour(const MassFunction& m) {
  const int k = m.frame().size();
  std::vector<double> pl(static_cast<std::size_t>(k), 0.0);
  for (const auto& [b, value] : m.focal_sets()) {
    for (int i = 0; i < k; ++i) {
      if (b.contains(i)) pl[static_cast<std::size_t>(i)] += value;
    }
  }
  return ContourFunction(m.frame(), std::move(pl));
}

ContourFunction contour(const SimpleMassFunction& m) {
  std::vector<double> pl(m.singleton_masses().begin(), m.singleton_masses().end());
  for (double& v : pl) v += m.theta_mass();
  return ContourFunction(m.frame(), std::move(pl));
}

Combination dempster_combine(const MassFunction& m1, const MassFunction& m2) {
  require_same_frame(m1.frame(), m2.frame(), "dempster_combine");
  MassFunction::FocalMap combined;
  double conflict = 0.0;
  for (const auto& [b, mb] : m1.focal_sets()) {
    for (const auto& [c, mc] : m2.focal_sets()) {
      const Subset meet = b & c;
      if (meet.is_empty()) {
        conflict += mb * mc;
      } else {
        combined[meet] += mb * mc;
      }
    }
  }
  if (conflict >= kTotalConflictThreshold) {
    fail(ErrorCode::TotalConflict, "mass functions are in total conflict and cannot be combined");
  }
  const double norm = 1.0 - conflict;
  for (auto& [subset, value] : combined) value /= norm;
  return {MassFunction(m1.frame(), std::move(combined)), conflict};
}

SimpleCombination dempster_combine(const SimpleMassFunction& m1, const SimpleMassFunction& m2) {
  require_same_frame(m1.frame(), m2.frame(), "dempster_combine");
  const auto a = m1.singleton_masses();
  const auto b = m2.singleton_masses();
  const double a_theta = m1.theta_mass();
  const double b_theta = m2.theta_mass();
  const double sum_a = std::accumulate(a.begin(), a.end(), 0.0);
  const double sum_b = std::accumulate(b.begin(), b.end(), 0.0);
  double agreement = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) agreement += a[k] * b[k];
  const double conflict = sum_a * sum_b - agreement;
  if (conflict >= kTotalConflictThreshold) {
    fail(ErrorCode::TotalConflict, "mass functions are in total conflict and cannot be combined");
  }
  const double norm = 1.0 - conflict;
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    out[k] = (a[k] * b[k] + a[k] * b_theta + a_theta * b[k]) / norm;
  }
  return {SimpleMassFunction(m1.frame(), std::move(out), a_theta * b_theta / norm), conflict};
}

ContourFunction combine_contours(const ContourFunction& pl1, const ContourFunction& pl2,
                                 double conflict) {
  require_same_frame(pl1.frame(), pl2.frame(), "combine_contours");
  if (!(conflict >= 0.0) || conflict >= kTotalConflictThreshold) {
    fail(ErrorCode::TotalConflict, "combine_contours: conflict must lie in [0,1)");
  }
  const auto a = pl1.values();
  const auto b = pl2.values();
  std::vector<double> out(a.size());
  const double norm = 1.0 - conflict;
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k] / norm;
  return ContourFunction(pl1.frame(), std::move(out));
}

MassFunction condition(const MassFunction& m, Subset a) {
  if (a.is_empty()) fail(ErrorCode::ImpossibleCondition, "cannot condition on the empty set");
  if (!a.is_subset_of(Subset::full(m.frame().size()))) {
    fail(ErrorCode::InvalidArgument, "conditioning set is outside the frame");
  }
  if (plausibility(m, a) <= 1.0 - kTotalConflictThreshold) {
    fail(ErrorCode::ImpossibleCondition, "conditioning event has zero plausibility");
  }
  return dempster_combine(m, MassFunction::categorical(m.frame(), a)).mass;
}

MassFunction conditional_embed(const MassFunction& m0, Subset a) {
  const int k = m0.frame().size();
  if (a.is_empty()) fail(ErrorCode::InvalidArgument, "cannot embed from the empty context");
  const Subset outside = a.complement(k);
  MassFunction::FocalMap moved;
  for (const auto& [c, value] : m0.focal_sets()) {
    if (!c.is_subset_of(a)) {
      fail(ErrorCode::InvalidArgument,
           "focal set " + std::to_string(c.bits()) + " is not contained in the context");
    }
    moved[c | outside] += value;
  }
  return MassFunction(m0.frame(), std::move(moved));
}

MassFunction discount(const MassFunction& m, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "discount: reliability must lie in [0,1]");
  }
  MassFunction::FocalMap out;
  for (const auto& [b, value] : m.focal_sets()) out[b] += beta * value;
  out[Subset::full(m.frame().size())] += 1.0 - beta;
  return MassFunction(m.frame(), std::move(out));
}

MassFunction contextual_discount(const MassFunction& m, const ReliabilityVector& beta) {
  require_same_frame(m.frame(), beta.frame(), "contextual_discount");
  const int k = m.frame().size();
  const auto coeff = beta.values();
  MassFunction::FocalMap out;
  // Each class outside a focal set B joins the receiving set independently:
  // it is added with weight 1 - beta_k and left out with weight beta_k.
  for (const auto& [b, value] : m.focal_sets()) {
    const Subset rest = b.complement(k);
    std::uint32_t extra = rest.bits();
    while (true) {
      double weight = value;
      for (int i = 0; i < k; ++i) {
        if (!rest.contains(i)) continue;
        weight *= ((extra >> i) & 1u) ? 1.0 - coeff[static_cast<std::size_t>(i)]
                                      : coeff[static_cast<std::size_t>(i)];
      }
      if (weight > 0.0) out[b | Subset(extra)] += weight;
      if (extra == 0) break;
      extra = (extra - 1) & rest.bits();
    }
  }
  return MassFunction(m.frame(), std::move(out));
}

ContourFunction contextual_discount_contour(const ContourFunction& pl,
                                            const ReliabilityVector& beta) {
  require_same_frame(pl.frame(), beta.frame(), "contextual_discount_contour");
  const auto p = pl.values();
  const auto b = beta.values();
  std::vector<double> out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = 1.0 - b[k] + b[k] * p[k];
  return ContourFunction(pl.frame(), std::move(out));
}

std::vector<double> plausibility_to_probability(const ContourFunction& pl) {
  const auto p = pl.values();
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(total > 0.0)) {
    fail(ErrorCode::ZeroDenominator, "all singleton plausibilities are zero");
  }
  std::vector<double> out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] / total;
  return out;
}

// ---------------------------------------------------------------------------
// Text records

void write_mass_function(std::ostream& out, const MassFunction& m) {
  out << "frame";
  for (const auto& label : m.frame().labels()) out << ' ' << label;
  out << '\n';
  char buf[64];
  for (const auto& [subset, value] : m.focal_sets()) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out << subset.bits() << ' ' << buf << '\n';
  }
}

MassFunction read_mass_function(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::Truncated, "mass record: missing frame line");
  std::istringstream header(line);
  std::string keyword;
  header >> keyword;
  if (keyword != "frame") fail(ErrorCode::Format, "mass record: expected 'frame' line");
  std::vector<std::string> labels;
  for (std::string label; header >> label;) labels.push_back(label);
  Frame frame(std::move(labels));

  MassFunction::FocalMap masses;
  std::uint32_t previous = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::uint64_t bits = 0;
    std::string value_text;
    if (!(row >> bits >> value_text)) {
      fail(ErrorCode::Format, "mass record: malformed line '" + line + "'");
    }
    if (bits > 0xffffffffULL) fail(ErrorCode::Format, "mass record: bitmask too large");
    if (!first && static_cast<std::uint32_t>(bits) <= previous) {
      fail(ErrorCode::Format, "mass record: bitmasks must be strictly ascending");
    }
    previous = static_cast<std::uint32_t>(bits);
    first = false;
    masses.emplace(Subset(previous), std::stod(value_text));
  }
  return MassFunction(std::move(frame), std::move(masses));
}

std::string to_text(const MassFunction& m) {
  std::ostringstream os;
  write_mass_function(os, m);
  return os.str();
}

MassFunction mass_function_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_mass_function(is);
}

}  // namespace evifuse
