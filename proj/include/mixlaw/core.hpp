#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mixlaw {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error kinds. The CLI maps each kind onto an exit-code category.
enum class ErrorCode {
  kInvalidArgument,
  kParseError,
  kInvariantViolation,
  kLanguageMismatch,
  kMissingTarget,
  kMissingLoss,
  kShapeMismatch,
  kCapExceeded,
  kOracleFailure,
  kNonFinite,
  kDegenerateTheta,
  kDegenerateFamilyRatio,
  kDegenerateInput,
  kDegenerateDesign,
  kDomainViolation,
  kInsufficientData,
  kNoConvergence,
  kZeroVariance,
  kAllZero,
  kAllSkipped,
  kEmptyInput,
  kPartitionError,
  kInfeasible,
  kMaxIterations,
  kNumericOverflow,
};

enum class ErrorCategory { kInput, kNumeric, kInfeasible };

ErrorCategory CategoryOf(ErrorCode code);
std::string_view ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const { return code_; }
  ErrorCategory category() const { return CategoryOf(code_); }

 private:
  ErrorCode code_;
};

// Ordered set of unique language ids. Every vector and matrix in the library
// is indexed in this order.
class LanguageSet {
 public:
  LanguageSet() = default;
  explicit LanguageSet(std::vector<std::string> ids);

  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& operator[](int i) const { return ids_[i]; }

  // Index of `id`, or -1 when absent.
  int Find(std::string_view id) const;
  // Index of `id`; throws LanguageMismatch when absent.
  int IndexOf(std::string_view id) const;

  friend bool operator==(const LanguageSet&, const LanguageSet&) = default;

 private:
  std::vector<std::string> ids_;
};

// Coalition of players encoded as a bitmask over LanguageSet order.
using Coalition = std::uint64_t;

inline constexpr int kMaxPlayers = 63;

inline Coalition FullCoalition(int k) { return (Coalition{1} << k) - 1; }
inline bool Contains(Coalition s, int i) { return (s >> i) & 1U; }

std::string DescribeCoalition(Coalition s, const LanguageSet& languages);

// Counter-based deterministic hashing for seed derivation.
std::uint64_t SplitMix64(std::uint64_t x);
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

}  // namespace mixlaw
