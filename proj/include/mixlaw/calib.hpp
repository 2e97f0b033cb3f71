#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixlaw/core.hpp"

namespace mixlaw {

enum class LossTransform { kIdentity, kNegative, kLog, kExpNeg, kInverse };

// Candidate order, most preferred first. Used to break R^2 ties.
inline constexpr LossTransform kTransformPreference[] = {
    LossTransform::kExpNeg, LossTransform::kInverse, LossTransform::kLog, LossTransform::kNegative,
    LossTransform::kIdentity};

std::string TransformName(LossTransform transform);  // "l", "-l", "log(l)", "exp(-l)", "1/l"
LossTransform ParseTransform(const std::string& name);
double ApplyTransform(LossTransform transform, double loss);
// log and 1/l need positive losses.
bool TransformAdmits(LossTransform transform, double loss);

// s = a * g(l) + b fitted by ordinary least squares.
struct CalibrationModel {
  LossTransform transform = LossTransform::kExpNeg;
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
  double pearson_r = 0.0;  // between raw loss and score; NaN when either is constant
  bool underdetermined = false;  // two points: exact interpolation

  double Predict(double loss) const;
};

CalibrationModel FitCalibration(const std::vector<double>& losses, const std::vector<double>& scores,
                                LossTransform transform);

struct TransformFit {
  LossTransform transform;
  std::optional<CalibrationModel> model;  // empty when skipped
  std::string skipped_reason;
};

struct TransformSelection {
  CalibrationModel best;
  std::vector<TransformFit> table;  // in preference order
};

// Fits every admissible transform and keeps the highest R^2, ties (within
// 1e-12) going to the more preferred transform.
TransformSelection SelectTransform(const std::vector<double>& losses, const std::vector<double>& scores);

}  // namespace mixlaw
