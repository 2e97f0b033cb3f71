#include "mixlaw/laws.hpp"

#include <cmath>

namespace mixlaw {

namespace {

void CheckCoefficients(double E, double A, double B, double alpha, double beta, double gamma,
                       const std::string& who) {
  for (double v : {E, A, B, alpha, beta, gamma}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, who + ": non-finite law parameter");
    if (v < 0.0) throw Error(ErrorCode::kInvariantViolation, who + ": negative law parameter");
  }
}

void CheckScale(double N, double D) {
  if (!(N > 0.0) || !(D > 0.0) || !std::isfinite(N) || !std::isfinite(D)) {
    throw Error(ErrorCode::kInvalidArgument, "N and D must be positive and finite");
  }
}

}  // namespace

Mixture::Mixture(LanguageSet languages, Vector p) : languages_(std::move(languages)), p_(std::move(p)) {
  if (p_.size() != languages_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "mixture length does not match its language set");
  }
  for (Eigen::Index i = 0; i < p_.size(); ++i) {
    if (!std::isfinite(p_(i))) throw Error(ErrorCode::kNonFinite, "mixture ratio is not finite");
    if (p_(i) < 0.0) {
      throw Error(ErrorCode::kInvariantViolation, "negative mixture ratio for '" + languages_[i] + "'");
    }
  }
  if (std::abs(p_.sum() - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::kInvariantViolation, "mixture ratios do not sum to 1");
  }
}

Mixture Mixture::Uniform(const LanguageSet& languages) {
  const int k = languages.size();
  return Mixture(languages, Vector::Constant(k, 1.0 / k));
}

Mixture Mixture::OneHot(const LanguageSet& languages, int index) {
  Vector p = Vector::Zero(languages.size());
  p(index) = 1.0;
  return Mixture(languages, std::move(p));
}

Mixture Mixture::FromMap(const LanguageSet& languages, const std::map<std::string, double>& ratios,
                         double tolerance) {
  Vector p = Vector::Zero(languages.size());
  for (const auto& [id, ratio] : ratios) {
    const int i = languages.Find(id);
    if (i < 0) {
      throw Error(ErrorCode::kLanguageMismatch, "mixture names language '" + id + "' outside the set");
    }
    p(i) = ratio;
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || p(i) < 0.0) {
      throw Error(ErrorCode::kInvariantViolation, "invalid mixture ratio for '" + languages[i] + "'");
    }
  }
  const double sum = p.sum();
  if (std::abs(sum - 1.0) > tolerance) {
    throw Error(ErrorCode::kInvariantViolation, "mixture sums to " + std::to_string(sum));
  }
  // Renormalize only beyond round-off so that re-reading an emitted mixture
  // reproduces it bit for bit.
  if (std::abs(sum - 1.0) > 1e-12) p /= sum;
  return Mixture(languages, std::move(p));
}

void RunRecord::Validate() const {
  if (!(N > 0.0) || !std::isfinite(N)) {
    throw Error(ErrorCode::kInvariantViolation, "run '" + run_id + "': N must be positive");
  }
  if (!(D > 0.0) || !std::isfinite(D)) {
    throw Error(ErrorCode::kInvariantViolation, "run '" + run_id + "': D must be positive");
  }
  for (const auto& [lang, loss] : losses) {
    if (!(loss > 0.0) || !std::isfinite(loss)) {
      throw Error(ErrorCode::kInvariantViolation,
                  "run '" + run_id + "': loss for '" + lang + "' must be positive and finite");
    }
  }
}

void LawParams::Validate() const {
  CheckCoefficients(E, A, B, alpha, beta, gamma, "law for '" + target + "'");
}

double LawParams::Chinchilla(double N, double D) const {
  return E + A * std::pow(N, -alpha) + B * std::pow(D, -beta);
}

void FamilyLawParams::Validate() const {
  if (members.empty()) throw Error(ErrorCode::kInvalidArgument, "family '" + family + "' has no members");
  CheckCoefficients(E, A, B, alpha, beta, gamma, "family law '" + family + "'");
}

double FamilyLawParams::Chinchilla(double N, double D) const {
  return E + A * std::pow(N, -alpha) + B * std::pow(D, -beta);
}

double FamilyLawParams::FamilyRatio(const Mixture& mixture) const {
  double q = 0.0;
  for (const auto& m : members) q += mixture[mixture.languages().IndexOf(m)];
  return q;
}

void PreferenceWeights::Validate() const {
  bool any_positive = false;
  for (const auto& [target, weight] : w) {
    if (!std::isfinite(weight) || weight < 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "weight for '" + target + "' must be non-negative");
    }
    any_positive = any_positive || weight > 0.0;
  }
  if (!any_positive) throw Error(ErrorCode::kInvalidArgument, "at least one weight must be positive");
}

double PreferenceWeights::at(const std::string& target) const {
  auto it = w.find(target);
  if (it == w.end()) throw Error(ErrorCode::kMissingTarget, "no weight for target '" + target + "'");
  return it->second;
}

double AggregateTransfer(const Mixture& mixture, const TransferMatrix& transfer, int target) {
  if (!(mixture.languages() == transfer.languages())) {
    throw Error(ErrorCode::kLanguageMismatch, "mixture and transfer matrix use different languages");
  }
  return mixture.p().dot(transfer.values().col(target));
}

double AggregateTransfer(const Mixture& mixture, const TransferMatrix& transfer,
                         const std::string& target) {
  return AggregateTransfer(mixture, transfer, transfer.languages().IndexOf(target));
}

double ChinchillaPredict(const LawParams& params, double N, double D) {
  CheckScale(N, D);
  return params.Chinchilla(N, D);
}

LawPrediction ShapleyLawPredict(const LawParams& params, const TransferMatrix& transfer, double N,
                                double D, const Mixture& mixture) {
  const double theta = AggregateTransfer(mixture, transfer, params.target);
  if (!(theta >= kMinTheta)) {
    throw Error(ErrorCode::kDegenerateTheta,
                "aggregate transfer into '" + params.target + "' is " + std::to_string(theta));
  }
  const double chin = ChinchillaPredict(params, N, D);
  return {params.target, theta, chin * std::pow(theta, -params.gamma)};
}

double FamilyLawPredict(const FamilyLawParams& params, double N, double D, const Mixture& mixture) {
  CheckScale(N, D);
  const double q = params.FamilyRatio(mixture);
  if (!(q > 0.0)) {
    throw Error(ErrorCode::kDegenerateFamilyRatio, "family '" + params.family + "' has zero mass");
  }
  const double chin = params.Chinchilla(N, D);
  return chin * std::pow(q, -params.gamma);
}

PredictionError ComputePredictionError(const std::vector<double>& predicted,
                                       const std::vector<double>& observed) {
  if (predicted.empty() || observed.empty()) throw Error(ErrorCode::kEmptyInput, "no points to score");
  if (predicted.size() != observed.size()) {
    throw Error(ErrorCode::kShapeMismatch, "predicted and observed differ in length");
  }
  const auto n = static_cast<double>(observed.size());
  double pe = 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!(observed[i] > 0.0)) throw Error(ErrorCode::kInvalidArgument, "observed values must be positive");
    pe += std::abs(predicted[i] - observed[i]) / observed[i];
    mean += observed[i];
  }
  mean /= n;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    ss_tot += (observed[i] - mean) * (observed[i] - mean);
  }
  PredictionError out;
  out.pe = pe / n;
  if (ss_tot > 0.0) {
    out.r_squared = 1.0 - ss_res / ss_tot;
  } else {
    out.r_squared = ss_res == 0.0 ? 1.0 : std::nan("");
  }
  return out;
}

double AggregateLoss(const std::map<std::string, double>& per_target, const PreferenceWeights& weights) {
  double total = 0.0;
  for (const auto& [target, loss] : per_target) total += weights.at(target) * loss;
  return total;
}

}  // namespace mixlaw
