#include "mixlaw/calib.hpp"

#include <cmath>
#include <limits>

namespace mixlaw {

std::string TransformName(LossTransform transform) {
  switch (transform) {
    case LossTransform::kIdentity: return "l";
    case LossTransform::kNegative: return "-l";
    case LossTransform::kLog: return "log(l)";
    case LossTransform::kExpNeg: return "exp(-l)";
    case LossTransform::kInverse: return "1/l";
  }
  return "?";
}

LossTransform ParseTransform(const std::string& name) {
  for (LossTransform t : kTransformPreference) {
    if (TransformName(t) == name) return t;
  }
  if (name == "identity") return LossTransform::kIdentity;
  if (name == "negative") return LossTransform::kNegative;
  if (name == "log") return LossTransform::kLog;
  if (name == "exp") return LossTransform::kExpNeg;
  if (name == "inverse") return LossTransform::kInverse;
  throw Error(ErrorCode::kInvalidArgument, "unknown transform '" + name + "'");
}

double ApplyTransform(LossTransform transform, double loss) {
  switch (transform) {
    case LossTransform::kIdentity: return loss;
    case LossTransform::kNegative: return -loss;
    case LossTransform::kLog: return std::log(loss);
    case LossTransform::kExpNeg: return std::exp(-loss);
    case LossTransform::kInverse: return 1.0 / loss;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

bool TransformAdmits(LossTransform transform, double loss) {
  if (transform == LossTransform::kLog || transform == LossTransform::kInverse) return loss > 0.0;
  return true;
}

double CalibrationModel::Predict(double loss) const { return a * ApplyTransform(transform, loss) + b; }

CalibrationModel FitCalibration(const std::vector<double>& losses, const std::vector<double>& scores,
                                LossTransform transform) {
  if (losses.size() != scores.size()) throw Error(ErrorCode::kShapeMismatch, "losses and scores differ in length");
  const std::size_t n = losses.size();
  if (n < 2) throw Error(ErrorCode::kInsufficientData, "calibration needs at least two points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(losses[i]) || !std::isfinite(scores[i])) {
      throw Error(ErrorCode::kNonFinite, "calibration inputs must be finite");
    }
    if (!TransformAdmits(transform, losses[i])) {
      throw Error(ErrorCode::kDomainViolation, TransformName(transform) + " needs positive losses");
    }
    g[i] = ApplyTransform(transform, losses[i]);
  }

  auto mean = [n](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(n);
  };
  const double g_mean = mean(g);
  const double s_mean = mean(scores);
  const double l_mean = mean(losses);
  double sgg = 0.0, sgs = 0.0, sss = 0.0, sll = 0.0, sls = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dg = g[i] - g_mean;
    const double ds = scores[i] - s_mean;
    const double dl = losses[i] - l_mean;
    sgg += dg * dg;
    sgs += dg * ds;
    sss += ds * ds;
    sll += dl * dl;
    sls += dl * ds;
  }
  if (!(sgg > 1e-300) || sgg <= 1e-24 * g_mean * g_mean * static_cast<double>(n)) {
    throw Error(ErrorCode::kDegenerateDesign, TransformName(transform) + " of the losses is constant");
  }

  CalibrationModel model;
  model.transform = transform;
  model.a = sgs / sgg;
  model.b = s_mean - model.a * g_mean;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = scores[i] - (model.a * g[i] + model.b);
    ss_res += r * r;
  }
  if (sss > 0.0) {
    model.r_squared = 1.0 - ss_res / sss;
  } else {
    model.r_squared = 1.0;  // constant scores are fitted exactly by a = 0
  }
  model.pearson_r = (sll > 0.0 && sss > 0.0) ? sls / std::sqrt(sll * sss) : std::numeric_limits<double>::quiet_NaN();
  model.underdetermined = n == 2;
  return model;
}

TransformSelection SelectTransform(const std::vector<double>& losses, const std::vector<double>& scores) {
  TransformSelection out{};
  std::optional<CalibrationModel> best;
  for (LossTransform t : kTransformPreference) {
    TransformFit row{t, std::nullopt, ""};
    try {
      row.model = FitCalibration(losses, scores, t);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDomainViolation && e.code() != ErrorCode::kDegenerateDesign) throw;
      row.skipped_reason = std::string(ErrorCodeName(e.code()));
    }
    if (row.model) {
      // Strict improvement beyond the tie window; earlier entries win ties.
      if (!best || row.model->r_squared > best->r_squared + 1e-12) best = row.model;
    }
    out.table.push_back(std::move(row));
  }
  if (!best) throw Error(ErrorCode::kAllSkipped, "no transform admits these losses");
  out.best = *best;
  return out;
}

}  // namespace mixlaw
