#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mixlaw/core.hpp"

namespace mixlaw {

// Payoff oracle v_j(S): coalition bitmask over the player set, target index.
using PayoffOracle = std::function<double(Coalition, int)>;

// A multilingual pretraining game: players are source languages, each target
// language defines one payoff function. Payoffs are memoized per
// (coalition, target); v_j(empty) is 0 and never reaches the oracle.
class CoalitionGame {
 public:
  CoalitionGame(LanguageSet players, LanguageSet targets, PayoffOracle oracle);
  // Players and targets share one language set.
  CoalitionGame(LanguageSet languages, PayoffOracle oracle);

  const LanguageSet& players() const { return players_; }
  const LanguageSet& targets() const { return targets_; }
  int num_players() const { return players_.size(); }
  int num_targets() const { return targets_.size(); }

  // Thread-safe. Oracle exceptions and non-finite payoffs surface as
  // OracleFailure naming the coalition.
  double Payoff(Coalition s, int target) const;

  // Number of distinct (coalition, target) pairs evaluated so far.
  std::size_t oracle_calls() const;

  // v = a + b, over identical player and target sets.
  static CoalitionGame Sum(const CoalitionGame& a, const CoalitionGame& b);

 private:
  struct Cache;

  LanguageSet players_;
  LanguageSet targets_;
  PayoffOracle oracle_;
  std::shared_ptr<Cache> cache_;
};

// Raw Shapley values: values(i, j) is the contribution of player i to target j.
struct ShapleyMatrix {
  LanguageSet players;
  LanguageSet targets;
  Matrix values;
  Vector grand_payoffs;  // v_j(all players), per target
  // Per-entry standard error; empty for exact computations.
  Matrix std_error;
};

// Exponentially normalized transfer matrix. Entries lie in [0, 1] and every
// column attains exactly 1. Rows are sources, columns are targets, both in
// the order of `languages()`.
//
// Entries produced by NormalizeShapley are strictly positive; exact zeros are
// admitted so that purely diagonal transfer can be expressed.
class TransferMatrix {
 public:
  TransferMatrix(LanguageSet languages, Matrix values);

  const LanguageSet& languages() const { return languages_; }
  const Matrix& values() const { return values_; }
  int size() const { return languages_.size(); }
  double operator()(int source, int target) const { return values_(source, target); }

  static TransferMatrix Identity(const LanguageSet& languages);

 private:
  LanguageSet languages_;
  Matrix values_;
};

struct ShapleyOptions {
  int enumeration_cap = 16;
};

ShapleyMatrix ExactShapley(const CoalitionGame& game, const ShapleyOptions& options = {});

// Permutation-sampling estimate. Samples are split into fixed-size chunks,
// each with its own seed derived from `seed`, so the result does not depend
// on how chunks are scheduled.
ShapleyMatrix MonteCarloShapley(const CoalitionGame& game, long samples, std::uint64_t seed);

// phi_nsv(i, j) = exp(phi(i, j) - max_i' phi(i', j)), per target column.
TransferMatrix NormalizeShapley(const ShapleyMatrix& raw);

struct AxiomCheck {
  std::string name;
  bool applicable = false;  // false when the premise never holds (e.g. no symmetric pair)
  bool passed = true;
  double max_violation = 0.0;
  int instances = 0;  // symmetric pairs / null players / targets examined
};

struct AxiomReport {
  std::vector<AxiomCheck> checks;
  bool all_passed() const;
  const AxiomCheck& get(const std::string& name) const;
};

struct AxiomOptions {
  // Absolute tolerance, scaled by max(1, |payoff scale|), used both to detect
  // axiom premises and to judge violations.
  double tolerance = 1e-12;
  int exact_symmetry_max_players = 8;
  int sampled_subsets = 512;
  std::uint64_t seed = 0;
};

struct SumDecomposition {
  const CoalitionGame* first = nullptr;
  const CoalitionGame* second = nullptr;
};

// Checks efficiency, symmetry, null player and (when `parts` is given)
// linearity of `sv` against `game`. Violations are report content.
AxiomReport VerifyAxioms(const CoalitionGame& game, const ShapleyMatrix& sv,
                         std::optional<SumDecomposition> parts = std::nullopt,
                         const AxiomOptions& options = {});

}  // namespace mixlaw
