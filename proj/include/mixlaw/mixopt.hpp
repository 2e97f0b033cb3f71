#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixlaw/fit.hpp"
#include "mixlaw/game.hpp"
#include "mixlaw/laws.hpp"

namespace mixlaw {

// Per-language corpus limits. Languages missing from `available_tokens` are
// unconstrained.
struct CorpusBudget {
  std::map<std::string, double> available_tokens;
  double D = 0.0;

  // p_bar_i = D_bar_i / D in `languages` order (+inf when unconstrained).
  Vector Caps(const LanguageSet& languages) const;
};

struct OptimizerConfig {
  double tol = 1e-7;
  int max_iterations = 200000;
};

struct OptimizationResult {
  Mixture mixture;
  double objective_value = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  std::vector<std::string> active_set;  // languages saturated at their cap
  bool converged = false;               // false: iteration cap hit, best iterate returned
};

// J(p) = sum_j w_j * C_j(N, D) * Theta_j(p)^-gamma_j over the given laws.
double MixtureObjective(const Mixture& mixture, const std::vector<LawParams>& laws,
                        const PreferenceWeights& weights, const TransferMatrix& transfer, double N,
                        double D);

// dJ/dp_i = -sum_j w_j C_j gamma_j phi(i, j) Theta_j^-(gamma_j + 1).
Vector MixtureObjectiveGradient(const Mixture& mixture, const std::vector<LawParams>& laws,
                                const PreferenceWeights& weights, const TransferMatrix& transfer,
                                double N, double D);

// Projected gradient descent over {p in simplex, p <= caps} with a
// backtracking line search, started from the (projected) uniform mixture.
OptimizationResult OptimizeSimplex(const std::vector<LawParams>& laws, const PreferenceWeights& weights,
                                   const TransferMatrix& transfer, double N, double D,
                                   const std::optional<CorpusBudget>& budget = std::nullopt,
                                   const OptimizerConfig& config = {});

// KKT residual of `mixture`: spread of the marginal utilities over interior
// coordinates plus any sign violation at the bounds, relative to
// 1 + |common value|.
double KktResidual(const Vector& p, const Vector& gradient, const Vector& caps);

// Euclidean projection onto {sum p = 1, 0 <= p <= caps}. Caps must sum to >= 1.
Vector ProjectCappedSimplex(const Vector& y, const Vector& caps);

// Optimum of the separable objective obtained when transfer is diagonal with
// entries r: p_i proportional to (w_i C_i gamma_i r_i^-gamma_i)^(1/(gamma_i+1)).
// `laws` holds one law per language, in `languages` order.
Mixture DiagonalClosedForm(const LanguageSet& languages, const std::vector<LawParams>& laws,
                           const PreferenceWeights& weights, const Vector& r, double N, double D);

struct CorrectionResult {
  Mixture mixture;
  std::vector<std::string> clamped;  // languages whose factor hit the floor
};

// p_i = p0_i * (1 - sum_{j != i} phi(i, j) / (gamma_i + 1)), floored, then
// renormalized. `gammas` is indexed by language.
CorrectionResult FirstOrderCorrection(const Mixture& p0, const TransferMatrix& transfer,
                                      const Vector& gammas, double floor = 1e-6);

struct ClipResult {
  Mixture mixture;
  int iterations = 0;
  std::vector<std::string> active_set;
};

// Saturates violated coordinates at their cap and redistributes the remaining
// mass over the free coordinates proportionally to p0, until nothing is violated.
ClipResult ClipAndRedistribute(const Mixture& p0, const CorpusBudget& budget);
ClipResult ClipAndRedistribute(const Mixture& p0, const Vector& caps);

// p_i proportional to (D_bar_i / D)^alpha; zero-token languages get 0.
Mixture SmoothedSampling(const LanguageSet& languages, const Vector& tokens, double alpha);
Mixture SmoothedSampling(const std::vector<std::pair<std::string, double>>& tokens, double alpha);

// Unweighted: all 1. Normalized: w_j = 1 / monolingual loss of j.
PreferenceWeights MakeWeights(WeightMode mode, const LanguageSet& targets,
                              const std::map<std::string, double>& monolingual_losses = {});

// Optimizes family ratios q_m with the simplex solver, then splits each q_m
// across the family's members by smoothed sampling.
Mixture FamilyLawOptimize(const LanguageSet& languages, const std::vector<FamilyLawParams>& families,
                          const PreferenceWeights& weights, const Vector& tokens, double alpha,
                          double N, double D, const OptimizerConfig& config = {});

}  // namespace mixlaw
