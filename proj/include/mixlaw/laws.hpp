#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixlaw/core.hpp"
#include "mixlaw/game.hpp"

namespace mixlaw {

// A point on the probability simplex over an ordered language set.
class Mixture {
 public:
  static constexpr double kSumTolerance = 1e-9;

  Mixture(LanguageSet languages, Vector p);

  static Mixture Uniform(const LanguageSet& languages);
  static Mixture OneHot(const LanguageSet& languages, int index);
  // Builds from a language -> ratio map; languages missing from the map get
  // ratio 0. Sums within `tolerance` of 1 are renormalized, anything further
  // off is rejected with InvariantViolation.
  static Mixture FromMap(const LanguageSet& languages, const std::map<std::string, double>& ratios,
                         double tolerance = 1e-6);

  const LanguageSet& languages() const { return languages_; }
  const Vector& p() const { return p_; }
  double operator[](int i) const { return p_(i); }
  int size() const { return languages_.size(); }

 private:
  LanguageSet languages_;
  Vector p_;
};

struct RunRecord {
  std::string run_id;
  double N = 0.0;  // non-embedding parameters
  double D = 0.0;  // training tokens
  std::map<std::string, double> mixture;
  std::map<std::string, double> losses;

  // Throws InvariantViolation on non-positive N, D or losses.
  void Validate() const;
};

// Fitted parameters of one per-target law. For Chinchilla fits gamma is 0.
struct LawParams {
  std::string target;
  double E = 0.0;
  double A = 0.0;
  double B = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  void Validate() const;
  // C = E + A / N^alpha + B / D^beta.
  double Chinchilla(double N, double D) const;
};

struct FamilyLawParams {
  std::string family;
  std::vector<std::string> members;
  double E = 0.0;
  double A = 0.0;
  double B = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  void Validate() const;
  double Chinchilla(double N, double D) const;
  // Summed ratio of the family's members under `mixture`.
  double FamilyRatio(const Mixture& mixture) const;
};

struct LawPrediction {
  std::string target;
  double theta = 0.0;
  double predicted_loss = 0.0;
};

enum class WeightMode { kUnweighted, kNormalized, kCustom };

struct PreferenceWeights {
  WeightMode mode = WeightMode::kUnweighted;
  std::map<std::string, double> w;

  void Validate() const;
  double at(const std::string& target) const;
};

inline constexpr double kMinTheta = 1e-12;

// Theta_j = sum_i p_i * transfer(i, j).
double AggregateTransfer(const Mixture& mixture, const TransferMatrix& transfer, int target);
double AggregateTransfer(const Mixture& mixture, const TransferMatrix& transfer,
                         const std::string& target);

double ChinchillaPredict(const LawParams& params, double N, double D);

// Chinchilla value rescaled by Theta^-gamma.
LawPrediction ShapleyLawPredict(const LawParams& params, const TransferMatrix& transfer, double N,
                                double D, const Mixture& mixture);

double FamilyLawPredict(const FamilyLawParams& params, double N, double D, const Mixture& mixture);

struct PredictionError {
  double pe = 0.0;         // mean |pred - obs| / obs
  double r_squared = 0.0;  // 1 - SS_res / SS_tot; NaN when observed is constant and misfit
};

PredictionError ComputePredictionError(const std::vector<double>& predicted,
                                       const std::vector<double>& observed);

// sum_j w_j * L_j over the targets present in `per_target`.
double AggregateLoss(const std::map<std::string, double>& per_target,
                     const PreferenceWeights& weights);

}  // namespace mixlaw
