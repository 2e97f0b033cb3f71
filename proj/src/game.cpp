#include "mixlaw/game.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <mutex>
#include <random>
#include <numeric>
#include <unordered_map>

namespace mixlaw {

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<Coalition, int>& key) const {
    return static_cast<std::size_t>(SplitMix64(key.first * 131u + static_cast<Coalition>(key.second)));
  }
};

// Weight |S|!(K-|S|-1)!/K! of a coalition of size s not containing the player.
std::vector<double> ShapleyWeights(int k) {
  std::vector<double> w(k);
  for (int s = 0; s < k; ++s) {
    // 1 / (K * C(K-1, s))
    double binom = 1.0;
    for (int r = 1; r <= s; ++r) binom = binom * (k - 1 - s + r) / r;
    w[s] = 1.0 / (k * binom);
  }
  return w;
}

void CheckCap(const CoalitionGame& game, int cap) {
  if (game.num_players() > cap) {
    throw Error(ErrorCode::kCapExceeded,
                "exact enumeration over " + std::to_string(game.num_players()) +
                    " players exceeds the cap of " + std::to_string(cap));
  }
}

double PayoffScale(const CoalitionGame& game, int target) {
  return std::max(1.0, std::abs(game.Payoff(FullCoalition(game.num_players()), target)));
}

}  // namespace

struct CoalitionGame::Cache {
  std::mutex mu;
  std::unordered_map<std::pair<Coalition, int>, double, PairHash> values;
};

CoalitionGame::CoalitionGame(LanguageSet players, LanguageSet targets, PayoffOracle oracle)
    : players_(std::move(players)),
      targets_(std::move(targets)),
      oracle_(std::move(oracle)),
      cache_(std::make_shared<Cache>()) {
  if (players_.size() == 0 || targets_.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "game needs at least one player and one target");
  }
  if (!oracle_) throw Error(ErrorCode::kInvalidArgument, "game has no payoff oracle");
}

CoalitionGame::CoalitionGame(LanguageSet languages, PayoffOracle oracle)
    : CoalitionGame(languages, languages, std::move(oracle)) {}

double CoalitionGame::Payoff(Coalition s, int target) const {
  if (target < 0 || target >= num_targets()) {
    throw Error(ErrorCode::kInvalidArgument, "target index out of range");
  }
  if (s & ~FullCoalition(num_players())) {
    throw Error(ErrorCode::kInvalidArgument, "coalition mask has bits outside the player set");
  }
  if (s == 0) return 0.0;
  const auto key = std::make_pair(s, target);
  {
    std::lock_guard lock(cache_->mu);
    if (auto it = cache_->values.find(key); it != cache_->values.end()) return it->second;
  }
  double value = 0.0;
  try {
    value = oracle_(s, target);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kOracleFailure, "payoff oracle failed for coalition " +
                                               DescribeCoalition(s, players_) + " on target " +
                                               targets_[target] + ": " + e.what());
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kOracleFailure, "non-finite payoff for coalition " +
                                               DescribeCoalition(s, players_) + " on target " +
                                               targets_[target]);
  }
  std::lock_guard lock(cache_->mu);
  // A concurrent evaluation may have inserted the same value already.
  cache_->values.emplace(key, value);
  return value;
}

std::size_t CoalitionGame::oracle_calls() const {
  std::lock_guard lock(cache_->mu);
  return cache_->values.size();
}

CoalitionGame CoalitionGame::Sum(const CoalitionGame& a, const CoalitionGame& b) {
  if (!(a.players() == b.players()) || !(a.targets() == b.targets())) {
    throw Error(ErrorCode::kLanguageMismatch, "summed games must share players and targets");
  }
  return CoalitionGame(a.players(), a.targets(),
                       [a, b](Coalition s, int j) { return a.Payoff(s, j) + b.Payoff(s, j); });
}

TransferMatrix::TransferMatrix(LanguageSet languages, Matrix values)
    : languages_(std::move(languages)), values_(std::move(values)) {
  const int k = languages_.size();
  if (values_.rows() != k || values_.cols() != k) {
    throw Error(ErrorCode::kShapeMismatch, "transfer matrix must be " + std::to_string(k) + "x" +
                                               std::to_string(k));
  }
  for (int j = 0; j < k; ++j) {
    double col_max = 0.0;
    for (int i = 0; i < k; ++i) {
      const double v = values_(i, j);
      if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "transfer matrix entry is not finite");
      if (v < 0.0 || v > 1.0) {
        throw Error(ErrorCode::kInvariantViolation,
                    "transfer entry (" + languages_[i] + ", " + languages_[j] + ") outside [0, 1]");
      }
      col_max = std::max(col_max, v);
    }
    if (col_max != 1.0) {
      throw Error(ErrorCode::kInvariantViolation,
                  "transfer column '" + languages_[j] + "' does not attain 1");
    }
  }
}

TransferMatrix TransferMatrix::Identity(const LanguageSet& languages) {
  return TransferMatrix(languages, Matrix::Identity(languages.size(), languages.size()));
}

ShapleyMatrix ExactShapley(const CoalitionGame& game, const ShapleyOptions& options) {
  CheckCap(game, options.enumeration_cap);
  const int k = game.num_players();
  const int t = game.num_targets();
  const Coalition full = FullCoalition(k);
  const auto weights = ShapleyWeights(k);

  ShapleyMatrix out;
  out.players = game.players();
  out.targets = game.targets();
  out.values = Matrix::Zero(k, t);
  out.grand_payoffs = Vector::Zero(t);

  std::vector<double> v(std::size_t{1} << k);
  for (int j = 0; j < t; ++j) {
    for (Coalition s = 0; s <= full; ++s) v[s] = game.Payoff(s, j);
    for (int i = 0; i < k; ++i) {
      const Coalition bit = Coalition{1} << i;
      double phi = 0.0;
      for (Coalition s = 0; s <= full; ++s) {
        if (s & bit) continue;
        phi += weights[std::popcount(s)] * (v[s | bit] - v[s]);
      }
      out.values(i, j) = phi;
    }
    out.grand_payoffs(j) = v[full];
  }
  return out;
}

ShapleyMatrix MonteCarloShapley(const CoalitionGame& game, long samples, std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::kInvalidArgument, "samples must be >= 1");
  constexpr long kChunk = 1024;
  const int k = game.num_players();
  const int t = game.num_targets();

  Matrix sum = Matrix::Zero(k, t);
  Matrix sum_sq = Matrix::Zero(k, t);
  std::vector<int> order(k);
  std::vector<double> prev(t), cur(t);
  for (long chunk = 0; chunk * kChunk < samples; ++chunk) {
    std::mt19937_64 rng(MixSeed(seed, static_cast<std::uint64_t>(chunk)));
    const long n = std::min(kChunk, samples - chunk * kChunk);
    for (long r = 0; r < n; ++r) {
      std::iota(order.begin(), order.end(), 0);
      // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
      for (int a = k - 1; a > 0; --a) {
        const auto b = static_cast<int>(rng() % static_cast<std::uint64_t>(a + 1));
        std::swap(order[a], order[b]);
      }
      Coalition s = 0;
      std::fill(prev.begin(), prev.end(), 0.0);
      for (int pos = 0; pos < k; ++pos) {
        const int i = order[pos];
        s |= Coalition{1} << i;
        for (int j = 0; j < t; ++j) {
          cur[j] = game.Payoff(s, j);
          const double delta = cur[j] - prev[j];
          sum(i, j) += delta;
          sum_sq(i, j) += delta * delta;
        }
        std::swap(prev, cur);
      }
    }
  }

  ShapleyMatrix out;
  out.players = game.players();
  out.targets = game.targets();
  const double n = static_cast<double>(samples);
  out.values = sum / n;
  out.std_error = Matrix::Zero(k, t);
  if (samples > 1) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < t; ++j) {
        const double var = std::max(0.0, (sum_sq(i, j) - n * out.values(i, j) * out.values(i, j)) / (n - 1));
        out.std_error(i, j) = std::sqrt(var / n);
      }
    }
  }
  out.grand_payoffs = Vector(t);
  for (int j = 0; j < t; ++j) out.grand_payoffs(j) = game.Payoff(FullCoalition(k), j);
  return out;
}

TransferMatrix NormalizeShapley(const ShapleyMatrix& raw) {
  if (!(raw.players == raw.targets)) {
    throw Error(ErrorCode::kShapeMismatch, "normalization needs a square player-by-target matrix");
  }
  const Matrix& v = raw.values;
  if (!v.allFinite()) throw Error(ErrorCode::kNonFinite, "Shapley matrix has non-finite entries");
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double m = v.col(j).maxCoeff();
    for (Eigen::Index i = 0; i < v.rows(); ++i) out(i, j) = std::exp(v(i, j) - m);
  }
  return TransferMatrix(raw.players, std::move(out));
}

bool AxiomReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AxiomCheck& c) { return c.passed; });
}

const AxiomCheck& AxiomReport::get(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::kInvalidArgument, "no axiom check named '" + name + "'");
}

namespace {

// Enumerates the coalitions over which a premise is checked: all subsets of
// `free` for small games, a fixed random sample otherwise.
std::vector<Coalition> PremiseSubsets(Coalition free, int k, const AxiomOptions& options,
                                      std::uint64_t salt) {
  std::vector<Coalition> out;
  if (k <= options.exact_symmetry_max_players) {
    // Standard submask enumeration, including the empty set.
    Coalition s = free;
    while (true) {
      out.push_back(s);
      if (s == 0) break;
      s = (s - 1) & free;
    }
    return out;
  }
  std::mt19937_64 rng(MixSeed(options.seed, salt));
  out.push_back(0);
  out.push_back(free);
  for (int r = 0; r < options.sampled_subsets; ++r) out.push_back(rng() & free);
  return out;
}

}  // namespace

AxiomReport VerifyAxioms(const CoalitionGame& game, const ShapleyMatrix& sv,
                         std::optional<SumDecomposition> parts, const AxiomOptions& options) {
  const int k = game.num_players();
  const int t = game.num_targets();
  if (sv.values.rows() != k || sv.values.cols() != t) {
    throw Error(ErrorCode::kShapeMismatch, "Shapley matrix does not match the game");
  }
  const Coalition full = FullCoalition(k);
  AxiomReport report;

  AxiomCheck eff{"efficiency", true, true, 0.0, t};
  for (int j = 0; j < t; ++j) {
    const double grand = game.Payoff(full, j);
    const double rel = std::abs(sv.values.col(j).sum() - grand) / std::max(1.0, std::abs(grand));
    eff.max_violation = std::max(eff.max_violation, rel);
  }
  // Efficiency is judged at the looser floating-point bound of a 2^K-term sum.
  eff.passed = eff.max_violation <= 1e-9;
  report.checks.push_back(eff);

  AxiomCheck sym{"symmetry"};
  for (int j = 0; j < t; ++j) {
    const double tol = options.tolerance * PayoffScale(game, j);
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        const Coalition free = full & ~(Coalition{1} << a) & ~(Coalition{1} << b);
        bool symmetric = true;
        for (Coalition s : PremiseSubsets(free, k, options, static_cast<std::uint64_t>(j * 4096 + a * 64 + b))) {
          if (std::abs(game.Payoff(s | (Coalition{1} << a), j) -
                       game.Payoff(s | (Coalition{1} << b), j)) > tol) {
            symmetric = false;
            break;
          }
        }
        if (!symmetric) continue;
        sym.applicable = true;
        ++sym.instances;
        const double diff = std::abs(sv.values(a, j) - sv.values(b, j));
        sym.max_violation = std::max(sym.max_violation, diff);
        if (diff > tol) sym.passed = false;
      }
    }
  }
  report.checks.push_back(sym);

  AxiomCheck null{"null_player"};
  for (int j = 0; j < t; ++j) {
    const double tol = options.tolerance * PayoffScale(game, j);
    for (int i = 0; i < k; ++i) {
      const Coalition bit = Coalition{1} << i;
      bool is_null = true;
      for (Coalition s : PremiseSubsets(full & ~bit, k, options, static_cast<std::uint64_t>(1 << 20) + j * 64 + i)) {
        if (std::abs(game.Payoff(s | bit, j) - game.Payoff(s, j)) > tol) {
          is_null = false;
          break;
        }
      }
      if (!is_null) continue;
      null.applicable = true;
      ++null.instances;
      const double mag = std::abs(sv.values(i, j));
      null.max_violation = std::max(null.max_violation, mag);
      if (mag > tol) null.passed = false;
    }
  }
  report.checks.push_back(null);

  AxiomCheck lin{"linearity"};
  if (parts && parts->first && parts->second) {
    ShapleyOptions opts;
    opts.enumeration_cap = std::max(opts.enumeration_cap, k);
    const Matrix expected = ExactShapley(*parts->first, opts).values + ExactShapley(*parts->second, opts).values;
    lin.applicable = true;
    lin.instances = t;
    for (int j = 0; j < t; ++j) {
      const double tol = options.tolerance * PayoffScale(game, j);
      for (int i = 0; i < k; ++i) {
        const double diff = std::abs(sv.values(i, j) - expected(i, j));
        lin.max_violation = std::max(lin.max_violation, diff);
        if (diff > tol) lin.passed = false;
      }
    }
  }
  report.checks.push_back(lin);
  return report;
}

}  // namespace mixlaw
