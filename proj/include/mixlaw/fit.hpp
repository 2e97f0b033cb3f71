#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixlaw/game.hpp"
#include "mixlaw/laws.hpp"

namespace mixlaw {

enum class LawKind { kChinchilla, kShapleyLaw, kFamilyLaw };

std::string LawKindName(LawKind kind);
LawKind ParseLawKind(const std::string& name);

struct Family {
  std::string id;
  std::vector<std::string> members;
};
using FamilySpec = std::vector<Family>;

// Finds the family that contains `language`; throws PartitionError otherwise.
const Family& FamilyOf(const FamilySpec& families, const std::string& language);

// Mixture context a law needs: the transfer matrix for ShapleyLaw, the family
// partition for FamilyLaw, nothing for Chinchilla.
struct LawContext {
  std::optional<TransferMatrix> transfer;
  std::optional<FamilySpec> families;
};

struct FitConfig {
  double huber_delta = 1e-3;
  // Records where some sampled language has p_i * D <= this are dropped.
  double min_subset_tokens = 1.5e9;

  std::vector<double> grid_E{0.5, 1.0, 2.0};
  std::vector<double> grid_log_A{0.0, 5.0, 10.0, 15.0};
  std::vector<double> grid_log_B{0.0, 5.0, 10.0, 15.0};
  std::vector<double> grid_alpha{0.2, 0.35, 0.5};
  std::vector<double> grid_beta{0.2, 0.35, 0.5};
  std::vector<double> grid_gamma{0.05, 0.2, 0.5};

  double exponent_max = 2.0;  // upper bound for alpha and beta
  double gamma_min = 1e-6;
  double gamma_max = 5.0;

  int max_iterations = 400;
  double tolerance = 1e-14;  // relative objective decrease that counts as converged

  double outlier_threshold = 3.0;
  bool refit_without_outliers = false;

  // Held-out evaluation: explicit run ids, or a seeded random fraction.
  std::vector<std::string> holdout_ids;
  double holdout_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct FitDiagnostics {
  double pe_fit = 0.0;
  double r_squared = 0.0;
  std::optional<double> pe_test;
  std::optional<double> r_squared_test;
  int n_fit = 0;
  int n_test = 0;
  double objective = 0.0;  // Huber objective at the returned parameters
  bool converged = false;
  bool degraded = false;  // best start hit the iteration cap
  int starts = 0;
  std::vector<std::string> outlier_ids;
  std::vector<std::pair<std::string, std::string>> excluded;  // run id, reason
  std::vector<std::string> fit_ids;
  std::vector<std::string> test_ids;
};

struct FitResult {
  LawKind kind = LawKind::kShapleyLaw;
  LawParams params;
  std::optional<Family> family;  // set for FamilyLaw fits
  FitDiagnostics diagnostics;

  FamilyLawParams AsFamilyParams() const;
};

// Robust multi-start fit of one target's law. Residuals are
// log(predicted) - log(observed) under a Huber loss.
FitResult FitLaw(const std::vector<RunRecord>& records, LawKind kind, const std::string& target,
                 const LawContext& context, const FitConfig& config = {});

// The record-exclusion rule on its own: returns a reason, or nullopt to keep.
std::optional<std::string> ExclusionReason(const RunRecord& record, double min_subset_tokens);

// Mixture-dependent factor (Theta, q or 1) the given law uses for `record`.
double MixtureFactor(const RunRecord& record, LawKind kind, const std::string& target,
                     const LawContext& context);

// Loss predicted by a fitted law for the configuration of `record`.
double PredictRecord(const FitResult& fit, const RunRecord& record, const LawContext& context);

}  // namespace mixlaw
