#include "mixlaw/core.hpp"

#include <unordered_set>

namespace mixlaw {

ErrorCategory CategoryOf(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInfeasible:
    case ErrorCode::kPartitionError:
      return ErrorCategory::kInfeasible;
    case ErrorCode::kNonFinite:
    case ErrorCode::kDegenerateTheta:
    case ErrorCode::kDegenerateFamilyRatio:
    case ErrorCode::kDegenerateInput:
    case ErrorCode::kDegenerateDesign:
    case ErrorCode::kNoConvergence:
    case ErrorCode::kZeroVariance:
    case ErrorCode::kMaxIterations:
    case ErrorCode::kNumericOverflow:
    case ErrorCode::kOracleFailure:
      return ErrorCategory::kNumeric;
    default:
      return ErrorCategory::kInput;
  }
}

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kLanguageMismatch: return "LanguageMismatch";
    case ErrorCode::kMissingTarget: return "MissingTarget";
    case ErrorCode::kMissingLoss: return "MissingLoss";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kCapExceeded: return "CapExceeded";
    case ErrorCode::kOracleFailure: return "OracleFailure";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDegenerateTheta: return "DegenerateTheta";
    case ErrorCode::kDegenerateFamilyRatio: return "DegenerateFamilyRatio";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kDegenerateDesign: return "DegenerateDesign";
    case ErrorCode::kDomainViolation: return "DomainViolation";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kAllZero: return "AllZero";
    case ErrorCode::kAllSkipped: return "AllSkipped";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kPartitionError: return "PartitionError";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kMaxIterations: return "MaxIterations";
    case ErrorCode::kNumericOverflow: return "NumericOverflow";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what), code_(code) {}

LanguageSet::LanguageSet(std::vector<std::string> ids) : ids_(std::move(ids)) {
  if (ids_.empty()) throw Error(ErrorCode::kInvalidArgument, "language set is empty");
  if (static_cast<int>(ids_.size()) > kMaxPlayers) {
    throw Error(ErrorCode::kInvalidArgument, "too many languages for a coalition bitmask");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : ids_) {
    if (id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty language id");
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate language id '" + id + "'");
    }
  }
}

int LanguageSet::Find(std::string_view id) const {
  for (int i = 0; i < size(); ++i) {
    if (ids_[i] == id) return i;
  }
  return -1;
}

int LanguageSet::IndexOf(std::string_view id) const {
  const int i = Find(id);
  if (i < 0) throw Error(ErrorCode::kLanguageMismatch, "unknown language '" + std::string(id) + "'");
  return i;
}

std::string DescribeCoalition(Coalition s, const LanguageSet& languages) {
  std::string out = "{";
  bool first = true;
  for (int i = 0; i < languages.size(); ++i) {
    if (!Contains(s, i)) continue;
    if (!first) out += ",";
    out += languages[i];
    first = false;
  }
  return out + "}";
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b) {
  return SplitMix64(SplitMix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

}  // namespace mixlaw
