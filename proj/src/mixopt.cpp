#include "mixlaw/mixopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mixlaw {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// J(p) = sum_t coef_t * (phi_col_t . p)^-gamma_t with coef_t = w_t * C_t.
struct CompiledObjective {
  struct Term {
    int column = 0;
    double coef = 0.0;
    double gamma = 0.0;
  };
  Matrix phi;
  std::vector<Term> terms;

  // +inf outside the domain (some Theta <= 0).
  double Value(const Vector& p) const {
    double j = 0.0;
    for (const auto& t : terms) {
      const double theta = phi.col(t.column).dot(p);
      if (!(theta >= kMinTheta)) return kInf;
      j += t.coef * std::pow(theta, -t.gamma);
    }
    return j;
  }

  Vector Gradient(const Vector& p) const {
    Vector g = Vector::Zero(p.size());
    for (const auto& t : terms) {
      const double theta = phi.col(t.column).dot(p);
      if (!(theta >= kMinTheta)) {
        throw Error(ErrorCode::kDegenerateTheta, "aggregate transfer vanishes at this mixture");
      }
      g -= (t.coef * t.gamma * std::pow(theta, -(t.gamma + 1.0))) * phi.col(t.column);
    }
    return g;
  }
};

CompiledObjective Compile(const std::vector<LawParams>& laws, const PreferenceWeights& weights,
                          const TransferMatrix& transfer, double N, double D) {
  CompiledObjective obj;
  obj.phi = transfer.values();
  for (const auto& law : laws) {
    law.Validate();
    const double w = weights.at(law.target);
    if (w == 0.0) continue;
    obj.terms.push_back({transfer.languages().IndexOf(law.target), w * ChinchillaPredict(law, N, D), law.gamma});
  }
  return obj;
}

// Sum over i of clip(y_i - tau, 0, caps_i).
double ClippedSum(const Vector& y, const Vector& caps, double tau) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) s += std::clamp(y(i) - tau, 0.0, caps(i));
  return s;
}

std::vector<std::string> AtCap(const Vector& p, const Vector& caps, const LanguageSet& languages) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (std::isfinite(caps(i)) && p(i) >= caps(i)) out.push_back(languages[static_cast<int>(i)]);
  }
  return out;
}

void CheckFeasible(const Vector& caps) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < caps.size(); ++i) {
    if (!(caps(i) >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "caps must be non-negative");
    total += std::min(caps(i), 1.0);
  }
  if (total < 1.0 - 1e-12) {
    throw Error(ErrorCode::kInfeasible, "corpus caps sum to " + std::to_string(total) + " < 1");
  }
}

}  // namespace

Vector CorpusBudget::Caps(const LanguageSet& languages) const {
  if (!(D > 0.0)) throw Error(ErrorCode::kInvalidArgument, "budget D must be positive");
  Vector caps = Vector::Constant(languages.size(), kInf);
  for (const auto& [id, tokens] : available_tokens) {
    const int i = languages.IndexOf(id);
    if (!(tokens >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "available tokens must be non-negative");
    caps(i) = tokens / D;
  }
  return caps;
}

double MixtureObjective(const Mixture& mixture, const std::vector<LawParams>& laws,
                        const PreferenceWeights& weights, const TransferMatrix& transfer, double N,
                        double D) {
  if (!(mixture.languages() == transfer.languages())) {
    throw Error(ErrorCode::kLanguageMismatch, "mixture and transfer matrix use different languages");
  }
  const double j = Compile(laws, weights, transfer, N, D).Value(mixture.p());
  if (!std::isfinite(j)) throw Error(ErrorCode::kDegenerateTheta, "aggregate transfer vanishes at this mixture");
  return j;
}

Vector MixtureObjectiveGradient(const Mixture& mixture, const std::vector<LawParams>& laws,
                                const PreferenceWeights& weights, const TransferMatrix& transfer,
                                double N, double D) {
  if (!(mixture.languages() == transfer.languages())) {
    throw Error(ErrorCode::kLanguageMismatch, "mixture and transfer matrix use different languages");
  }
  return Compile(laws, weights, transfer, N, D).Gradient(mixture.p());
}

Vector ProjectCappedSimplex(const Vector& y, const Vector& caps) {
  const Eigen::Index k = y.size();
  Vector c = caps.cwiseMin(1.0);
  CheckFeasible(c);
  // The clipped sum is non-increasing and piecewise linear in tau with kinks
  // at y_i - c_i and y_i.
  std::vector<double> knots;
  knots.reserve(2 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    knots.push_back(y(i) - c(i));
    knots.push_back(y(i));
  }
  std::sort(knots.begin(), knots.end());
  // Largest knot index whose clipped sum is still >= 1.
  std::size_t lo = 0;
  std::size_t hi = knots.size() - 1;
  if (ClippedSum(y, c, knots[hi]) >= 1.0) {
    lo = hi;
  } else {
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (ClippedSum(y, c, knots[mid]) >= 1.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }
  double tau = knots[lo];
  const double s_lo = ClippedSum(y, c, knots[lo]);
  if (lo != hi) {
    const double s_hi = ClippedSum(y, c, knots[hi]);
    if (s_lo > s_hi) tau = knots[lo] + (s_lo - 1.0) * (knots[hi] - knots[lo]) / (s_lo - s_hi);
  }
  Vector p(k);
  for (Eigen::Index i = 0; i < k; ++i) p(i) = std::clamp(y(i) - tau, 0.0, c(i));
  return p;
}

double KktResidual(const Vector& p, const Vector& gradient, const Vector& caps) {
  double free_lo = kInf, free_hi = -kInf;
  double lower_min = kInf;   // bound at 0: need g_i >= lambda
  double upper_max = -kInf;  // bound at cap: need g_i <= lambda
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double g = gradient(i);
    if (p(i) <= 0.0) {
      lower_min = std::min(lower_min, g);
    } else if (p(i) >= std::min(caps(i), 1.0)) {
      upper_max = std::max(upper_max, g);
    } else {
      free_lo = std::min(free_lo, g);
      free_hi = std::max(free_hi, g);
    }
  }
  if (free_lo <= free_hi) {
    const double lambda = 0.5 * (free_lo + free_hi);
    double r = free_hi - free_lo;
    if (lower_min < lambda) r = std::max(r, lambda - lower_min);
    if (upper_max > lambda) r = std::max(r, upper_max - lambda);
    return r / (1.0 + std::abs(lambda));
  }
  // Every coordinate is at a bound: feasible multipliers exist iff the capped
  // utilities do not exceed the zero-ratio ones.
  if (lower_min == kInf || upper_max == -kInf) return 0.0;
  const double lambda = 0.5 * (lower_min + upper_max);
  return std::max(0.0, upper_max - lower_min) / (1.0 + std::abs(lambda));
}

OptimizationResult OptimizeSimplex(const std::vector<LawParams>& laws, const PreferenceWeights& weights,
                                   const TransferMatrix& transfer, double N, double D,
                                   const std::optional<CorpusBudget>& budget,
                                   const OptimizerConfig& config) {
  if (!(config.tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "optimizer tolerance must be positive");
  const LanguageSet& languages = transfer.languages();
  const int k = languages.size();
  for (const auto& law : laws) {
    if (!(law.gamma > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "law for '" + law.target + "' needs gamma > 0");
    }
  }
  const CompiledObjective obj = Compile(laws, weights, transfer, N, D);
  const Vector caps = budget ? budget->Caps(languages) : Vector::Constant(k, kInf);
  CheckFeasible(caps.cwiseMin(1.0));

  Vector p = ProjectCappedSimplex(Vector::Constant(k, 1.0 / k), caps);
  double f = obj.Value(p);
  if (!std::isfinite(f)) {
    throw Error(ErrorCode::kDegenerateTheta, "objective undefined at the starting mixture");
  }

  OptimizationResult result{Mixture(languages, p), f, 0.0, 0, {}, false};
  Vector g = obj.Gradient(p);
  double residual = KktResidual(p, g, caps);
  double step = 1.0;
  int iter = 0;
  for (; iter < config.max_iterations && residual > config.tol; ++iter) {
    // Backtracking on the proximal sufficient-decrease condition; the trial
    // step starts at twice the last accepted one (1.0 initially).
    step = std::min(step * 2.0, 1e8);
    Vector candidate;
    double f_new = kInf;
    bool moved = false;
    while (step > 1e-20) {
      candidate = ProjectCappedSimplex(p - step * g, caps);
      const Vector d = candidate - p;
      f_new = obj.Value(candidate);
      if (f_new <= f + g.dot(d) + d.squaredNorm() / (2.0 * step)) {
        moved = d.cwiseAbs().maxCoeff() > 0.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no representable progress
    p = candidate;
    f = f_new;
    g = obj.Gradient(p);
    residual = KktResidual(p, g, caps);
  }

  // Projection leaves the sum within round-off of 1; Mixture tolerates 1e-9.
  result.mixture = Mixture(languages, p);
  result.objective_value = f;
  result.kkt_residual = residual;
  result.iterations = iter;
  result.active_set = AtCap(p, caps, languages);
  result.converged = residual <= config.tol;
  return result;
}

Mixture DiagonalClosedForm(const LanguageSet& languages, const std::vector<LawParams>& laws,
                           const PreferenceWeights& weights, const Vector& r, double N, double D) {
  const int k = languages.size();
  if (static_cast<int>(laws.size()) != k || r.size() != k) {
    throw Error(ErrorCode::kShapeMismatch, "closed form needs one law and one r per language");
  }
  // Work with logs of the numerators to stay clear of overflow.
  Vector log_num(k);
  for (int i = 0; i < k; ++i) {
    const LawParams& law = laws[i];
    law.Validate();
    if (law.target != languages[i]) {
      throw Error(ErrorCode::kLanguageMismatch, "law order does not follow the language order");
    }
    if (!(r(i) > 0.0) || !(law.gamma > 0.0)) {
      throw Error(ErrorCode::kDegenerateInput, "closed form needs r > 0 and gamma > 0 for '" + languages[i] + "'");
    }
    const double base = weights.at(law.target) * ChinchillaPredict(law, N, D) * law.gamma;
    log_num(i) = base > 0.0 ? (std::log(base) - law.gamma * std::log(r(i))) / (law.gamma + 1.0)
                            : -kInf;
  }
  const double m = log_num.maxCoeff();
  if (!std::isfinite(m)) throw Error(ErrorCode::kDegenerateInput, "all closed-form numerators vanish");
  Vector p = (log_num.array() - m).exp();
  p /= p.sum();
  return Mixture(languages, std::move(p));
}

CorrectionResult FirstOrderCorrection(const Mixture& p0, const TransferMatrix& transfer,
                                      const Vector& gammas, double floor) {
  const int k = transfer.size();
  if (!(p0.languages() == transfer.languages())) {
    throw Error(ErrorCode::kLanguageMismatch, "mixture and transfer matrix use different languages");
  }
  if (gammas.size() != k) throw Error(ErrorCode::kShapeMismatch, "one gamma per language required");
  Vector p(k);
  std::vector<std::string> clamped;
  for (int i = 0; i < k; ++i) {
    const double outgoing = transfer.values().row(i).sum() - transfer(i, i);
    double factor = 1.0 - outgoing / (gammas(i) + 1.0);
    if (factor < floor) {
      factor = floor;
      clamped.push_back(transfer.languages()[i]);
    }
    p(i) = p0[i] * factor;
  }
  p /= p.sum();
  return {Mixture(p0.languages(), std::move(p)), std::move(clamped)};
}

ClipResult ClipAndRedistribute(const Mixture& p0, const CorpusBudget& budget) {
  return ClipAndRedistribute(p0, budget.Caps(p0.languages()));
}

ClipResult ClipAndRedistribute(const Mixture& p0, const Vector& caps_in) {
  const int k = p0.size();
  if (caps_in.size() != k) throw Error(ErrorCode::kShapeMismatch, "one cap per language required");
  const Vector caps = caps_in.cwiseMin(1.0);
  CheckFeasible(caps);
  const LanguageSet& languages = p0.languages();

  if (std::abs(caps.sum() - 1.0) <= 1e-12) {
    // Forced saturation: the only feasible point is the caps themselves.
    ClipResult out{Mixture(languages, caps / caps.sum()), 0, {}};
    const bool any_violation = (p0.p().array() > caps.array()).any();
    out.iterations = any_violation ? 1 : 0;
    if (any_violation) out.mixture = Mixture(languages, caps);
    for (int i = 0; i < k; ++i) out.active_set.push_back(languages[i]);
    return out;
  }

  std::vector<bool> active(k, false);
  Vector p = p0.p();
  int iterations = 0;
  while (true) {
    bool violated = false;
    for (int i = 0; i < k; ++i) {
      if (!active[i] && p(i) > caps(i)) {
        active[i] = true;
        violated = true;
      }
    }
    if (!violated) break;
    ++iterations;
    double mass = 1.0;
    double free_p0 = 0.0;
    double free_caps = 0.0;
    for (int i = 0; i < k; ++i) {
      if (active[i]) {
        mass -= caps(i);
      } else {
        free_p0 += p0[i];
        free_caps += caps(i);
      }
    }
    for (int i = 0; i < k; ++i) {
      if (active[i]) {
        p(i) = caps(i);
      } else if (free_p0 > 0.0) {
        p(i) = mass * p0[i] / free_p0;
      } else {
        // No reference mass left among free languages: spread by headroom.
        p(i) = mass * caps(i) / free_caps;
      }
    }
  }
  ClipResult out{Mixture(languages, p), iterations, {}};
  for (int i = 0; i < k; ++i) {
    if (active[i]) out.active_set.push_back(languages[i]);
  }
  return out;
}

Mixture SmoothedSampling(const LanguageSet& languages, const Vector& tokens, double alpha) {
  if (tokens.size() != languages.size()) throw Error(ErrorCode::kShapeMismatch, "one token count per language");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  Vector p = Vector::Zero(tokens.size());
  for (Eigen::Index i = 0; i < tokens.size(); ++i) {
    if (!(tokens(i) >= 0.0) || !std::isfinite(tokens(i))) {
      throw Error(ErrorCode::kInvalidArgument, "token counts must be non-negative and finite");
    }
    // D cancels in the normalization; the shares are taken against the total.
    if (tokens(i) > 0.0) p(i) = std::pow(tokens(i) / tokens.sum(), alpha);
  }
  const double total = p.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::kAllZero, "every language has zero tokens");
  return Mixture(languages, p / total);
}

Mixture SmoothedSampling(const std::vector<std::pair<std::string, double>>& tokens, double alpha) {
  std::vector<std::string> ids;
  Vector counts(static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ids.push_back(tokens[i].first);
    counts(static_cast<Eigen::Index>(i)) = tokens[i].second;
  }
  return SmoothedSampling(LanguageSet(std::move(ids)), counts, alpha);
}

PreferenceWeights MakeWeights(WeightMode mode, const LanguageSet& targets,
                              const std::map<std::string, double>& monolingual_losses) {
  PreferenceWeights out;
  out.mode = mode;
  for (const auto& id : targets.ids()) {
    switch (mode) {
      case WeightMode::kUnweighted:
        out.w[id] = 1.0;
        break;
      case WeightMode::kNormalized: {
        auto it = monolingual_losses.find(id);
        if (it == monolingual_losses.end() || !(it->second > 0.0)) {
          throw Error(ErrorCode::kMissingLoss, "no positive monolingual loss for '" + id + "'");
        }
        out.w[id] = 1.0 / it->second;
        break;
      }
      case WeightMode::kCustom:
        throw Error(ErrorCode::kInvalidArgument, "custom weights are supplied directly, not generated");
    }
  }
  return out;
}

Mixture FamilyLawOptimize(const LanguageSet& languages, const std::vector<FamilyLawParams>& families,
                          const PreferenceWeights& weights, const Vector& tokens, double alpha,
                          double N, double D, const OptimizerConfig& config) {
  if (tokens.size() != languages.size()) throw Error(ErrorCode::kShapeMismatch, "one token count per language");
  if (families.empty()) throw Error(ErrorCode::kPartitionError, "no families given");
  std::vector<int> owner(languages.size(), -1);
  std::vector<std::string> family_ids;
  std::vector<LawParams> family_laws;
  PreferenceWeights family_weights;
  family_weights.mode = WeightMode::kCustom;
  for (std::size_t m = 0; m < families.size(); ++m) {
    const FamilyLawParams& fam = families[m];
    fam.Validate();
    double w = 0.0;
    for (const auto& member : fam.members) {
      const int i = languages.Find(member);
      if (i < 0) throw Error(ErrorCode::kPartitionError, "family member '" + member + "' is not a language");
      if (owner[i] >= 0) throw Error(ErrorCode::kPartitionError, "language '" + member + "' is in two families");
      owner[i] = static_cast<int>(m);
      if (auto it = weights.w.find(member); it != weights.w.end()) w += it->second;
    }
    family_ids.push_back(fam.family);
    family_laws.push_back({fam.family, fam.E, fam.A, fam.B, fam.alpha, fam.beta, fam.gamma});
    family_weights.w[fam.family] = w;
  }
  for (int i = 0; i < languages.size(); ++i) {
    if (owner[i] < 0) throw Error(ErrorCode::kPartitionError, "language '" + languages[i] + "' has no family");
  }

  // Family losses depend only on their own ratio: an identity transfer over families.
  const LanguageSet family_set(family_ids);
  Vector q = Vector::Ones(1);
  if (family_set.size() > 1) {
    q = OptimizeSimplex(family_laws, family_weights, TransferMatrix::Identity(family_set), N, D,
                        std::nullopt, config)
            .mixture.p();
  }

  Vector p = Vector::Zero(languages.size());
  for (std::size_t m = 0; m < families.size(); ++m) {
    std::vector<std::pair<std::string, double>> member_tokens;
    for (const auto& member : families[m].members) {
      member_tokens.emplace_back(member, tokens(languages.IndexOf(member)));
    }
    const Mixture within = SmoothedSampling(member_tokens, alpha);
    for (int r = 0; r < within.size(); ++r) {
      p(languages.IndexOf(within.languages()[r])) = q(static_cast<Eigen::Index>(m)) * within[r];
    }
  }
  return Mixture(languages, std::move(p));
}

}  // namespace mixlaw
