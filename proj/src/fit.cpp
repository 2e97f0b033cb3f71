#include "mixlaw/fit.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

namespace mixlaw {

namespace {

// Parameter layout of the optimizer: E, log A, log B, alpha, beta, gamma.
constexpr int kNumParams = 6;
constexpr double kLogCoefMin = -30.0;
constexpr double kLogCoefMax = 40.0;
// Residual scale below which a point can never be flagged as an outlier.
constexpr double kMinResidualScale = 1e-6;

using Params6 = Eigen::Matrix<double, kNumParams, 1>;

struct DesignPoint {
  double log_n = 0.0;
  double log_d = 0.0;
  double log_x = 0.0;  // log of Theta / q; 0 for Chinchilla
  double log_y = 0.0;
};

struct Bounds {
  Params6 lo;
  Params6 hi;
};

struct Problem {
  std::vector<DesignPoint> points;
  Bounds bounds;
  double delta = 1e-3;
  bool fit_gamma = true;
};

double Huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double LogPredict(const Params6& x, const DesignPoint& pt) {
  const double c = x(0) + std::exp(x(1) - x(3) * pt.log_n) + std::exp(x(2) - x(4) * pt.log_d);
  return std::log(c) - x(5) * pt.log_x;
}

double Objective(const Problem& prob, const Params6& x) {
  double h = 0.0;
  for (const auto& pt : prob.points) h += Huber(LogPredict(x, pt) - pt.log_y, prob.delta);
  return std::isfinite(h) ? h : std::numeric_limits<double>::infinity();
}

Params6 Clamp(const Params6& x, const Bounds& b) { return x.cwiseMax(b.lo).cwiseMin(b.hi); }

struct LocalResult {
  Params6 x;
  double objective = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Projected Levenberg-Marquardt on the IRLS form of the Huber objective.
// Coordinates pinned at a bound with the gradient pointing outward are frozen
// for the step.
LocalResult Minimize(const Problem& prob, Params6 x, int max_iterations, double tol) {
  x = Clamp(x, prob.bounds);
  double f = Objective(prob, x);
  LocalResult out{x, f, false};
  if (!std::isfinite(f)) return out;

  const int n = static_cast<int>(prob.points.size());
  Eigen::Matrix<double, Eigen::Dynamic, kNumParams> jac(n, kNumParams);
  Eigen::VectorXd psi(n);
  Eigen::VectorXd omega(n);
  double lambda = 1e-3;

  for (int iter = 0; iter < max_iterations; ++iter) {
    for (int k = 0; k < n; ++k) {
      const auto& pt = prob.points[k];
      const double ta = std::exp(x(1) - x(3) * pt.log_n);
      const double tb = std::exp(x(2) - x(4) * pt.log_d);
      const double c = x(0) + ta + tb;
      const double r = std::log(c) - x(5) * pt.log_x - pt.log_y;
      jac(k, 0) = 1.0 / c;
      jac(k, 1) = ta / c;
      jac(k, 2) = tb / c;
      jac(k, 3) = -pt.log_n * ta / c;
      jac(k, 4) = -pt.log_d * tb / c;
      jac(k, 5) = prob.fit_gamma ? -pt.log_x : 0.0;
      const double a = std::abs(r);
      omega(k) = a <= prob.delta ? 1.0 : prob.delta / a;
      psi(k) = omega(k) * r;
    }
    const Params6 grad = jac.transpose() * psi;
    const Eigen::Matrix<double, kNumParams, kNumParams> hess =
        jac.transpose() * omega.asDiagonal() * jac;

    std::array<bool, kNumParams> free{};
    for (int p = 0; p < kNumParams; ++p) {
      const bool at_lo = x(p) <= prob.bounds.lo(p) && grad(p) > 0.0;
      const bool at_hi = x(p) >= prob.bounds.hi(p) && grad(p) < 0.0;
      free[p] = !(at_lo || at_hi) && prob.bounds.lo(p) < prob.bounds.hi(p);
    }

    bool accepted = false;
    Params6 step = Params6::Zero();
    double f_new = f;
    while (lambda < 1e16) {
      Eigen::Matrix<double, kNumParams, kNumParams> sys = hess;
      Params6 rhs = -grad;
      for (int p = 0; p < kNumParams; ++p) {
        sys(p, p) += lambda * std::max(hess(p, p), 1e-12) + 1e-300;
        if (!free[p]) {
          sys.row(p).setZero();
          sys.col(p).setZero();
          sys(p, p) = 1.0;
          rhs(p) = 0.0;
        }
      }
      step = sys.ldlt().solve(rhs);
      const Params6 candidate = Clamp(x + step, prob.bounds);
      f_new = Objective(prob, candidate);
      if (f_new < f) {
        step = candidate - x;
        x = candidate;
        accepted = true;
        lambda = std::max(lambda / 3.0, 1e-12);
        break;
      }
      lambda *= 4.0;
    }

    if (!accepted) {
      // No descent at any damping: stationary to working precision.
      out = {x, f, true};
      return out;
    }
    const double decrease = f - f_new;
    f = f_new;
    if (decrease <= tol * f || f < 1e-28 || step.norm() <= 1e-13 * (1.0 + x.norm())) {
      out = {x, f, true};
      return out;
    }
  }
  out = {x, f, false};
  return out;
}

bool BetterThan(const LocalResult& a, const LocalResult& b) {
  if (!std::isfinite(b.objective)) return std::isfinite(a.objective);
  const double scale = 1e-12 * (1.0 + std::abs(b.objective));
  if (a.objective < b.objective - scale) return true;
  if (a.objective > b.objective + scale) return false;
  return a.x.norm() < b.x.norm();
}

LawParams ToLawParams(const Params6& x, const std::string& target, bool with_gamma) {
  LawParams p;
  p.target = target;
  p.E = x(0);
  p.A = std::exp(x(1));
  p.B = std::exp(x(2));
  p.alpha = x(3);
  p.beta = x(4);
  p.gamma = with_gamma ? x(5) : 0.0;
  return p;
}

LocalResult MultiStart(const Problem& prob, const FitConfig& config, int* starts) {
  LocalResult best;
  const std::vector<double> no_gamma{0.0};
  const auto& gammas = prob.fit_gamma ? config.grid_gamma : no_gamma;
  int count = 0;
  for (double e : config.grid_E) {
    for (double la : config.grid_log_A) {
      for (double lb : config.grid_log_B) {
        for (double al : config.grid_alpha) {
          for (double be : config.grid_beta) {
            for (double ga : gammas) {
              Params6 x0;
              x0 << e, la, lb, al, be, ga;
              LocalResult r = Minimize(prob, x0, config.max_iterations, config.tolerance);
              ++count;
              if (BetterThan(r, best)) best = r;
            }
          }
        }
      }
    }
  }
  *starts = count;
  return best;
}

const char* kKindNames[] = {"chinchilla", "shapleylaw", "familylaw"};

}  // namespace

std::string LawKindName(LawKind kind) { return kKindNames[static_cast<int>(kind)]; }

LawKind ParseLawKind(const std::string& name) {
  for (int i = 0; i < 3; ++i) {
    if (name == kKindNames[i]) return static_cast<LawKind>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown law kind '" + name + "'");
}

const Family& FamilyOf(const FamilySpec& families, const std::string& language) {
  for (const auto& f : families) {
    if (std::find(f.members.begin(), f.members.end(), language) != f.members.end()) return f;
  }
  throw Error(ErrorCode::kPartitionError, "language '" + language + "' belongs to no family");
}

FamilyLawParams FitResult::AsFamilyParams() const {
  if (!family) throw Error(ErrorCode::kInvalidArgument, "not a family-law fit");
  return {family->id, family->members, params.E, params.A, params.B,
          params.alpha, params.beta, params.gamma};
}

std::optional<std::string> ExclusionReason(const RunRecord& record, double min_subset_tokens) {
  for (const auto& [lang, ratio] : record.mixture) {
    if (ratio > 0.0 && ratio * record.D <= min_subset_tokens) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "subset for '%s' has %.6g tokens (<= %.6g)", lang.c_str(),
                    ratio * record.D, min_subset_tokens);
      return std::string(buf);
    }
  }
  return std::nullopt;
}

double MixtureFactor(const RunRecord& record, LawKind kind, const std::string& target,
                     const LawContext& context) {
  switch (kind) {
    case LawKind::kChinchilla:
      return 1.0;
    case LawKind::kShapleyLaw: {
      if (!context.transfer) throw Error(ErrorCode::kInvalidArgument, "ShapleyLaw needs a transfer matrix");
      const Mixture m = Mixture::FromMap(context.transfer->languages(), record.mixture);
      return AggregateTransfer(m, *context.transfer, target);
    }
    case LawKind::kFamilyLaw: {
      if (!context.families) throw Error(ErrorCode::kInvalidArgument, "FamilyLaw needs a family partition");
      const Family& fam = FamilyOf(*context.families, target);
      double q = 0.0;
      for (const auto& m : fam.members) {
        if (auto it = record.mixture.find(m); it != record.mixture.end()) q += it->second;
      }
      return q;
    }
  }
  return 1.0;
}

double PredictRecord(const FitResult& fit, const RunRecord& record, const LawContext& context) {
  const double x = MixtureFactor(record, fit.kind, fit.params.target, context);
  if (!(x >= kMinTheta)) {
    throw Error(fit.kind == LawKind::kFamilyLaw ? ErrorCode::kDegenerateFamilyRatio
                                                : ErrorCode::kDegenerateTheta,
                "mixture factor for run '" + record.run_id + "' is not positive");
  }
  return ChinchillaPredict(fit.params, record.N, record.D) * std::pow(x, -fit.params.gamma);
}

FitResult FitLaw(const std::vector<RunRecord>& records, LawKind kind, const std::string& target,
                 const LawContext& context, const FitConfig& config) {
  if (!(config.huber_delta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "Huber delta must be positive");
  if (config.holdout_fraction < 0.0 || config.holdout_fraction >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "holdout fraction must lie in [0, 1)");
  }

  FitResult result;
  result.kind = kind;
  if (kind == LawKind::kFamilyLaw) {
    if (!context.families) throw Error(ErrorCode::kInvalidArgument, "FamilyLaw needs a family partition");
    result.family = FamilyOf(*context.families, target);
  }
  FitDiagnostics& diag = result.diagnostics;

  // Filter.
  struct Usable {
    const RunRecord* record;
    DesignPoint point;
  };
  std::vector<Usable> usable;
  for (const auto& rec : records) {
    rec.Validate();
    auto loss = rec.losses.find(target);
    if (loss == rec.losses.end()) {
      diag.excluded.emplace_back(rec.run_id, "no loss recorded for '" + target + "'");
      continue;
    }
    if (auto reason = ExclusionReason(rec, config.min_subset_tokens)) {
      diag.excluded.emplace_back(rec.run_id, *reason);
      continue;
    }
    const double x = MixtureFactor(rec, kind, target, context);
    if (!(x >= kMinTheta)) {
      diag.excluded.emplace_back(rec.run_id, "mixture factor is not positive");
      continue;
    }
    usable.push_back({&rec, {std::log(rec.N), std::log(rec.D), std::log(x), std::log(loss->second)}});
  }

  // Held-out split.
  std::vector<bool> is_test(usable.size(), false);
  if (!config.holdout_ids.empty()) {
    const std::set<std::string> ids(config.holdout_ids.begin(), config.holdout_ids.end());
    for (std::size_t i = 0; i < usable.size(); ++i) is_test[i] = ids.count(usable[i].record->run_id) > 0;
  } else if (config.holdout_fraction > 0.0) {
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(MixSeed(config.seed, 0x686f6c646f7574ULL));
    for (std::size_t a = order.size(); a > 1; --a) {
      std::swap(order[a - 1], order[rng() % a]);
    }
    const auto n_test = static_cast<std::size_t>(std::floor(config.holdout_fraction * usable.size()));
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  }

  const bool fit_gamma = kind != LawKind::kChinchilla;
  const int n_free = fit_gamma ? 6 : 5;

  auto build_problem = [&](const std::vector<std::size_t>& idx) {
    Problem prob;
    prob.delta = config.huber_delta;
    prob.fit_gamma = fit_gamma;
    prob.bounds.lo << 0.0, kLogCoefMin, kLogCoefMin, 0.0, 0.0, fit_gamma ? config.gamma_min : 0.0;
    prob.bounds.hi << std::numeric_limits<double>::infinity(), kLogCoefMax, kLogCoefMax,
        config.exponent_max, config.exponent_max, fit_gamma ? config.gamma_max : 0.0;
    for (std::size_t i : idx) prob.points.push_back(usable[i].point);
    return prob;
  };

  std::vector<std::size_t> fit_idx;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    if (!is_test[i]) fit_idx.push_back(i);
  }

  auto check_design = [&](const std::vector<std::size_t>& idx) {
    std::set<std::tuple<double, double, double>> distinct;
    for (std::size_t i : idx) {
      distinct.emplace(usable[i].record->N, usable[i].record->D, usable[i].point.log_x);
    }
    // Mixtures that share a mixture factor still count as one design point
    // for this law, so distinctness is judged on (N, D, factor).
    if (static_cast<int>(idx.size()) < n_free || static_cast<int>(distinct.size()) < std::min(n_free, 2)) {
      throw Error(ErrorCode::kInsufficientData,
                  std::to_string(distinct.size()) + " distinct design points for " +
                      std::to_string(n_free) + " free parameters");
    }
  };
  check_design(fit_idx);

  Problem prob = build_problem(fit_idx);
  LocalResult best = MultiStart(prob, config, &diag.starts);
  if (!std::isfinite(best.objective)) {
    throw Error(ErrorCode::kNoConvergence, "no start reached a finite objective");
  }

  // Outliers: standardized log residual against a robust (MAD) scale.
  auto residuals = [&](const Params6& x, const std::vector<std::size_t>& idx) {
    std::vector<double> r;
    r.reserve(idx.size());
    for (std::size_t i : idx) r.push_back(LogPredict(x, usable[i].point) - usable[i].point.log_y);
    return r;
  };
  {
    const auto r = residuals(best.x, fit_idx);
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    const double med = median(r);
    std::vector<double> dev;
    for (double v : r) dev.push_back(std::abs(v - med));
    const double scale = std::max(1.4826 * median(dev), kMinResidualScale);
    std::vector<std::size_t> kept;
    for (std::size_t k = 0; k < fit_idx.size(); ++k) {
      if (std::abs(r[k] - med) / scale > config.outlier_threshold) {
        diag.outlier_ids.push_back(usable[fit_idx[k]].record->run_id);
      } else {
        kept.push_back(fit_idx[k]);
      }
    }
    if (config.refit_without_outliers && kept.size() < fit_idx.size()) {
      check_design(kept);
      fit_idx = kept;
      prob = build_problem(fit_idx);
      best = MultiStart(prob, config, &diag.starts);
      if (!std::isfinite(best.objective)) {
        throw Error(ErrorCode::kNoConvergence, "no start reached a finite objective after outlier removal");
      }
    }
  }

  result.params = ToLawParams(best.x, target, fit_gamma);
  diag.objective = best.objective;
  diag.converged = best.converged;
  diag.degraded = !best.converged;

  auto score = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> pred, obs;
    for (std::size_t i : idx) {
      pred.push_back(std::exp(LogPredict(best.x, usable[i].point)));
      obs.push_back(std::exp(usable[i].point.log_y));
    }
    return ComputePredictionError(pred, obs);
  };
  const PredictionError fit_err = score(fit_idx);
  diag.pe_fit = fit_err.pe;
  diag.r_squared = fit_err.r_squared;
  diag.n_fit = static_cast<int>(fit_idx.size());
  for (std::size_t i : fit_idx) diag.fit_ids.push_back(usable[i].record->run_id);

  std::vector<std::size_t> test_idx;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    if (is_test[i]) test_idx.push_back(i);
  }
  if (!test_idx.empty()) {
    const PredictionError test_err = score(test_idx);
    diag.pe_test = test_err.pe;
    diag.r_squared_test = test_err.r_squared;
    diag.n_test = static_cast<int>(test_idx.size());
    for (std::size_t i : test_idx) diag.test_ids.push_back(usable[i].record->run_id);
  }
  return result;
}

}  // namespace mixlaw
