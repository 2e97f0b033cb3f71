#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mixlaw/fit.hpp"
#include "mixlaw/laws.hpp"

namespace fixtures {

using namespace mixlaw;

inline LanguageSet FourLanguages() { return LanguageSet({"en", "de", "fr", "zh"}); }

inline TransferMatrix FourLanguageTransfer() {
  Matrix phi(4, 4);
  phi << 1.0, 0.5, 0.4, 0.2,
         0.6, 1.0, 0.3, 0.25,
         0.45, 0.35, 1.0, 0.2,
         0.15, 0.2, 0.1, 1.0;
  return TransferMatrix(FourLanguages(), phi);
}

inline LawParams TrueEnglishLaw() { return {"en", 1.2, 400.0, 900.0, 0.31, 0.29, 0.6}; }

// 40 records over 5 model sizes, 4 data sizes and 5 mixtures, labelled with
// the ShapleyLaw loss for `law.target`, optionally with multiplicative
// log-normal noise.
inline std::vector<RunRecord> ShapleyLawRecords(const LawParams& law, const TransferMatrix& transfer,
                                                double noise_sigma, std::uint64_t seed) {
  const double sizes[] = {2e7, 6e7, 2e8, 6e8, 2e9};
  const double tokens[] = {2e10, 6e10, 2e11, 6e11};
  const std::vector<std::map<std::string, double>> mixtures = {
      {{"en", 0.4}, {"de", 0.2}, {"fr", 0.2}, {"zh", 0.2}},
      {{"en", 0.1}, {"de", 0.3}, {"fr", 0.3}, {"zh", 0.3}},
      {{"en", 0.7}, {"de", 0.1}, {"fr", 0.1}, {"zh", 0.1}},
      {{"en", 0.25}, {"de", 0.25}, {"fr", 0.25}, {"zh", 0.25}},
      {{"en", 0.1}, {"de", 0.1}, {"fr", 0.1}, {"zh", 0.7}}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<RunRecord> records;
  for (int k = 0; k < 40; ++k) {
    const double N = sizes[k % 5];
    const double D = tokens[(k / 5) % 4];
    const auto& mix = mixtures[(k / 2 + k) % 5];
    const Mixture m = Mixture::FromMap(transfer.languages(), mix);
    const double theta = AggregateTransfer(m, transfer, law.target);
    double loss = law.Chinchilla(N, D) * std::pow(theta, -law.gamma);
    if (noise_sigma > 0.0) loss *= std::exp(noise_sigma * normal(rng));
    records.push_back({"run" + std::to_string(k), N, D, mix, {{law.target, loss}}});
  }
  return records;
}

// Three languages in three families. The target `zh` keeps a fixed ratio
// while `ja`, from another family, transfers strongly into it and varies.
// Scale barely moves, so mixture effects dominate the loss variance.
struct CrossFamilySetting {
  TransferMatrix transfer;
  FamilySpec families;
  LawParams law;
  std::vector<RunRecord> records;
};

inline CrossFamilySetting CrossFamilyData() {
  const LanguageSet langs({"zh", "ja", "es"});
  Matrix phi(3, 3);
  phi << 1.0, 0.3, 0.05,
         0.9, 1.0, 0.05,
         0.02, 0.05, 1.0;
  CrossFamilySetting s{TransferMatrix(langs, phi),
                       {{"sinitic", {"zh"}}, {"japonic", {"ja"}}, {"romance", {"es"}}},
                       {"zh", 1.5, 300.0, 800.0, 0.3, 0.28, 0.8},
                       {}};
  const double sizes[] = {1e8, 1.2e8};
  const double D = 1e11;
  int id = 0;
  for (double N : sizes) {
    for (int v = 0; v < 10; ++v) {
      const double ja = 0.05 + 0.095 * v;
      const std::map<std::string, double> mix{{"zh", 0.05}, {"ja", ja}, {"es", 0.95 - ja}};
      const Mixture m = Mixture::FromMap(langs, mix);
      const double theta = AggregateTransfer(m, s.transfer, "zh");
      const double loss = s.law.Chinchilla(N, D) * std::pow(theta, -s.law.gamma);
      s.records.push_back({"x" + std::to_string(id++), N, D, mix, {{"zh", loss}}});
    }
  }
  return s;
}

}  // namespace fixtures
