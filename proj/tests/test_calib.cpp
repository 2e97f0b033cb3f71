#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mixlaw/calib.hpp"

using namespace mixlaw;

namespace {

struct Sample {
  std::vector<double> losses;
  std::vector<double> scores;
};

Sample Generate(LossTransform g, double a, double b, double sigma, int n, std::uint64_t seed, double lo = 2.0,
                double hi = 3.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> noise(0.0, sigma);
  Sample s;
  for (int i = 0; i < n; ++i) {
    const double l = u(rng);
    s.losses.push_back(l);
    s.scores.push_back(a * ApplyTransform(g, l) + b + (sigma > 0.0 ? noise(rng) : 0.0));
  }
  return s;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("transform names round-trip") {
  for (LossTransform t : kTransformPreference) CHECK(ParseTransform(TransformName(t)) == t);
  CHECK(ParseTransform("exp") == LossTransform::kExpNeg);
  CHECK_THROWS_AS(ParseTransform("sqrt"), Error);
  CHECK(ApplyTransform(LossTransform::kInverse, 4.0) == 0.25);
  CHECK_FALSE(TransformAdmits(LossTransform::kLog, 0.0));
  CHECK(TransformAdmits(LossTransform::kNegative, -1.0));
}

TEST_CASE("noise-free data is recovered exactly") {
  for (LossTransform t : kTransformPreference) {
    const Sample s = Generate(t, 2.0, 1.0, 0.0, 20, 1);
    const CalibrationModel m = FitCalibration(s.losses, s.scores, t);
    CHECK(m.a == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(m.b == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(m.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.Predict(2.7) == doctest::Approx(2.0 * ApplyTransform(t, 2.7) + 1.0));
  }
}

TEST_CASE("fitted line has the least squared error") {
  const Sample s = Generate(LossTransform::kExpNeg, 3.0, 0.2, 0.05, 30, 2);
  const CalibrationModel m = FitCalibration(s.losses, s.scores, LossTransform::kExpNeg);
  auto sse = [&](double a, double b) {
    double e = 0.0;
    for (std::size_t i = 0; i < s.losses.size(); ++i) {
      const double r = s.scores[i] - (a * std::exp(-s.losses[i]) + b);
      e += r * r;
    }
    return e;
  };
  const double best = sse(m.a, m.b);
  for (double da : {-1e-3, 1e-3}) {
    for (double db : {-1e-4, 1e-4}) {
      CHECK(sse(m.a + da, m.b) >= best);
      CHECK(sse(m.a, m.b + db) >= best);
    }
  }
  CHECK(m.pearson_r < 0.0);
  CHECK(m.r_squared <= 1.0);
}

TEST_CASE("two points interpolate and are flagged") {
  const CalibrationModel m = FitCalibration({2.0, 3.0}, {0.5, 0.3}, LossTransform::kNegative);
  CHECK(m.underdetermined);
  CHECK(m.Predict(2.0) == doctest::Approx(0.5));
  CHECK(m.Predict(3.0) == doctest::Approx(0.3));
  CHECK(CodeOf([] { FitCalibration({2.0}, {0.5}, LossTransform::kNegative); }) == ErrorCode::kInsufficientData);
}

TEST_CASE("domain and design errors") {
  CHECK(CodeOf([] { FitCalibration({-1.0, 2.0, 3.0}, {1, 2, 3}, LossTransform::kLog); }) ==
        ErrorCode::kDomainViolation);
  CHECK(CodeOf([] { FitCalibration({2.0, 2.0, 2.0}, {1, 2, 3}, LossTransform::kExpNeg); }) ==
        ErrorCode::kDegenerateDesign);
  CHECK(CodeOf([] { FitCalibration({1.0, 2.0}, {1, 2, 3}, LossTransform::kExpNeg); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("selection recovers the generating transform") {
  const Sample s = Generate(LossTransform::kExpNeg, 2.0, 1.0, 1e-3, 40, 3);
  const TransformSelection sel = SelectTransform(s.losses, s.scores);
  CHECK(sel.best.transform == LossTransform::kExpNeg);
  CHECK(sel.table.size() == 5);
  CHECK(sel.table.front().transform == LossTransform::kExpNeg);
}

TEST_CASE("exactly linear data ties l and -l; -l wins") {
  std::vector<double> l{1.0, 2.0, 3.0, 4.0};
  std::vector<double> s{4.0, 3.0, 2.0, 1.0};
  const TransformSelection sel = SelectTransform(l, s);
  CHECK(sel.best.transform == LossTransform::kNegative);
  CHECK(sel.best.a == doctest::Approx(1.0));
}

TEST_CASE("inadmissible transforms are skipped and reported") {
  std::vector<double> l{-1.0, 0.5, 1.0, 2.0};
  std::vector<double> s{3.0, 1.5, 1.0, 0.0};
  const TransformSelection sel = SelectTransform(l, s);
  int skipped = 0;
  for (const auto& row : sel.table) {
    if (!row.model) {
      ++skipped;
      CHECK_FALSE(row.skipped_reason.empty());
    }
  }
  CHECK(skipped == 2);
  CHECK(CodeOf([] { SelectTransform({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}); }) == ErrorCode::kAllSkipped);
}

TEST_CASE("affine rescaling of scores rescales the fit") {
  const Sample s = Generate(LossTransform::kInverse, 1.5, 0.3, 0.02, 25, 4);
  const CalibrationModel m = FitCalibration(s.losses, s.scores, LossTransform::kInverse);
  std::vector<double> scaled;
  for (double v : s.scores) scaled.push_back(2.0 * v - 1.0);
  const CalibrationModel n = FitCalibration(s.losses, scaled, LossTransform::kInverse);
  CHECK(n.a == doctest::Approx(2.0 * m.a).epsilon(1e-10));
  CHECK(n.b == doctest::Approx(2.0 * m.b - 1.0).epsilon(1e-10));
  CHECK(n.r_squared == doctest::Approx(m.r_squared).epsilon(1e-10));
}

TEST_CASE("recovery at reported parameters") {
  // a = 4.030, b = 0.098 over a downstream-like loss range, sigma = 0.005.
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = Generate(LossTransform::kExpNeg, 4.030, 0.098, 0.005, 200, 100 + seed, 2.0, 3.5);
    const TransformSelection sel = SelectTransform(s.losses, s.scores);
    const bool ok = sel.best.transform == LossTransform::kExpNeg && std::abs(sel.best.a / 4.030 - 1.0) <= 0.02 &&
                    std::abs(sel.best.b / 0.098 - 1.0) <= 0.02;
    recovered += ok;
  }
  CHECK(recovered >= 9);
}
