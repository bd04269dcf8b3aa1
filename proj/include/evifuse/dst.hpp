#pragma once

// Dempster-Shafer algebra over small frames of discernment.
//
// General mass functions are stored sparsely (focal sets only) and are
// limited to K <= 16 classes. The contour-level operations work for any K
// and run in linear time; they are what the segmentation pipeline uses.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace evifuse {

inline constexpr int kMaxGeneralFrameSize = 16;
inline constexpr double kMassSumTolerance = 1e-12;
inline constexpr double kRenormalizeTolerance = 1e-9;
inline constexpr double kTotalConflictThreshold = 1.0 - 1e-12;

/// Ordered set of class labels. Copies share the label storage.
class Frame {
 public:
  explicit Frame(std::vector<std::string> labels);

  /// Frame with labels "theta1" .. "thetaK".
  static Frame indexed(int k);

  int size() const noexcept { return static_cast<int>(labels_->size()); }
  const std::vector<std::string>& labels() const noexcept { return *labels_; }
  const std::string& label(int k) const { return labels_->at(static_cast<std::size_t>(k)); }

  friend bool operator==(const Frame& a, const Frame& b) {
    return a.labels_ == b.labels_ || *a.labels_ == *b.labels_;
  }

 private:
  std::shared_ptr<const std::vector<std::string>> labels_;
};

/// Bit-set encoding of a subset of a frame; bit k is class k.
class Subset {
 public:
  constexpr Subset() = default;
  constexpr explicit Subset(std::uint32_t bits) : bits_(bits) {}

  static constexpr Subset empty() { return Subset(0); }
  static constexpr Subset full(int k) { return Subset(k >= 32 ? ~0u : ((1u << k) - 1u)); }
  static constexpr Subset singleton(int k) { return Subset(1u << k); }

  constexpr std::uint32_t bits() const noexcept { return bits_; }
  constexpr bool is_empty() const noexcept { return bits_ == 0; }
  constexpr bool contains(int k) const noexcept { return (bits_ >> k) & 1u; }
  constexpr bool is_subset_of(Subset other) const noexcept {
    return (bits_ & ~other.bits_) == 0;
  }
  constexpr bool intersects(Subset other) const noexcept { return (bits_ & other.bits_) != 0; }
  int cardinality() const noexcept;

  constexpr Subset operator&(Subset o) const noexcept { return Subset(bits_ & o.bits_); }
  constexpr Subset operator|(Subset o) const noexcept { return Subset(bits_ | o.bits_); }
  /// Complement within a frame of size k.
  constexpr Subset complement(int k) const noexcept { return Subset(~bits_ & full(k).bits_); }

  constexpr auto operator<=>(const Subset&) const = default;

 private:
  std::uint32_t bits_ = 0;
};

/// Basic belief assignment over the subsets of a frame.
class MassFunction {
 public:
  using FocalMap = std::map<Subset, double>;

  /// Checked construction. Zero entries are dropped. Sums within 1e-9 of one
  /// are renormalized; anything else throws.
  MassFunction(Frame frame, FocalMap masses);

  /// Stores the entries as given so that `validate` can report on them.
  static MassFunction unchecked(Frame frame, FocalMap masses);

  static MassFunction vacuous(Frame frame);
  static MassFunction categorical(Frame frame, Subset focal);

  const Frame& frame() const noexcept { return frame_; }
  const FocalMap& focal_sets() const noexcept { return masses_; }
  double mass(Subset a) const;

 private:
  struct UncheckedTag {};
  MassFunction(UncheckedTag, Frame frame, FocalMap masses);

  Frame frame_;
  FocalMap masses_;
};

/// Mass on the K singletons plus the whole frame.
class SimpleMassFunction {
 public:
  SimpleMassFunction(Frame frame, std::vector<double> singleton_masses, double theta_mass);

  static SimpleMassFunction vacuous(Frame frame);

  const Frame& frame() const noexcept { return frame_; }
  std::span<const double> singleton_masses() const noexcept { return singletons_; }
  double singleton_mass(int k) const { return singletons_.at(static_cast<std::size_t>(k)); }
  double theta_mass() const noexcept { return theta_; }

  MassFunction to_mass_function() const;

 private:
  Frame frame_;
  std::vector<double> singletons_;
  double theta_;
};

/// Plausibilities of the singletons.
class ContourFunction {
 public:
  ContourFunction(Frame frame, std::vector<double> pl);

  const Frame& frame() const noexcept { return frame_; }
  std::span<const double> values() const noexcept { return pl_; }
  double operator[](int k) const { return pl_.at(static_cast<std::size_t>(k)); }

 private:
  Frame frame_;
  std::vector<double> pl_;
};

/// Per-class reliability coefficients of one source.
class ReliabilityVector {
 public:
  ReliabilityVector(Frame frame, std::vector<double> beta);

  static ReliabilityVector uniform(Frame frame, double beta);

  const Frame& frame() const noexcept { return frame_; }
  std::span<const double> values() const noexcept { return beta_; }
  double operator[](int k) const { return beta_.at(static_cast<std::size_t>(k)); }

 private:
  Frame frame_;
  std::vector<double> beta_;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate(const MassFunction& m);

double belief(const MassFunction& m, Subset a);
double plausibility(const MassFunction& m, Subset a);

ContourFunction contour(const MassFunction& m);
ContourFunction contour(const SimpleMassFunction& m);

struct Combination {
  MassFunction mass;
  double conflict;
};

/// Dempster's rule. Throws TotalConflict when the conflict reaches 1 - 1e-12.
Combination dempster_combine(const MassFunction& m1, const MassFunction& m2);

struct SimpleCombination {
  SimpleMassFunction mass;
  double conflict;
};

/// Dempster's rule restricted to the singleton-plus-frame family; O(K).
SimpleCombination dempster_combine(const SimpleMassFunction& m1, const SimpleMassFunction& m2);

/// Contour of the orthogonal sum from the two contours and their conflict.
ContourFunction combine_contours(const ContourFunction& pl1, const ContourFunction& pl2,
                                 double conflict);

MassFunction condition(const MassFunction& m, Subset a);
MassFunction conditional_embed(const MassFunction& m0, Subset a);

MassFunction discount(const MassFunction& m, double beta);
MassFunction contextual_discount(const MassFunction& m, const ReliabilityVector& beta);
ContourFunction contextual_discount_contour(const ContourFunction& pl,
                                            const ReliabilityVector& beta);

std::vector<double> plausibility_to_probability(const ContourFunction& pl);

/// Text record: a `frame` line with the labels, then `bitmask mass` lines in
/// ascending bitmask order with 17 significant digits.
void write_mass_function(std::ostream& out, const MassFunction& m);
MassFunction read_mass_function(std::istream& in);
std::string to_text(const MassFunction& m);
MassFunction mass_function_from_text(const std::string& text);

}  // namespace evifuse
