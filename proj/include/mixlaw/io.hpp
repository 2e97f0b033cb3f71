#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mixlaw/fit.hpp"
#include "mixlaw/game.hpp"
#include "mixlaw/irds.hpp"
#include "mixlaw/laws.hpp"
#include "mixlaw/mixopt.hpp"

namespace mixlaw {

// Shortest decimal text that reads back to the same double.
std::string FormatNumber(double value);

// ---- run records: one JSON object per line --------------------------------
// {"run_id": ..., "N": ..., "D": ..., "mixture": {lang: ratio}, "losses": {lang: loss}}
// Mixtures off by at most 1e-6 are renormalized; further off is an
// InvariantViolation. Blank lines and lines starting with '#' are skipped.
std::vector<RunRecord> ParseRunRecords(std::istream& in);
std::vector<RunRecord> ReadRunRecords(const std::string& path);
std::string FormatRunRecord(const RunRecord& record);
void WriteRunRecords(std::ostream& out, const std::vector<RunRecord>& records);

// ---- matrices: CSV with a "source/target" corner cell ---------------------
struct LabeledMatrix {
  LanguageSet rows;
  LanguageSet cols;
  Matrix values;
};

LabeledMatrix ParseMatrixCsv(std::istream& in);
std::string FormatMatrixCsv(const LanguageSet& rows, const LanguageSet& cols, const Matrix& values);

TransferMatrix ReadTransferMatrix(const std::string& path);
// Raw Shapley values read back with grand payoffs set to column sums.
ShapleyMatrix ReadShapleyMatrix(const std::string& path);

// ---- coalition fixtures ---------------------------------------------------
// Line-oriented text, '#' starts a comment:
//   languages en,de,fr
//   en,de  fr  0.42        coalition, target, payoff
//   weight en  fr  0.3     parametric form
// Payoffs not listed explicitly fall back to 1 - exp(-sum_{i in S} weight(i, j))
// when any weight line is present.
struct CoalitionFixture {
  LanguageSet languages;
  std::map<std::pair<Coalition, int>, double> payoffs;
  std::optional<Matrix> weights;

  CoalitionGame Game() const;
};

CoalitionFixture ParseCoalitionFixture(std::istream& in);
CoalitionFixture ReadCoalitionFixture(const std::string& path);

// ---- law parameter files (JSON) -------------------------------------------
// {"kind": "shapleylaw", "laws": [{"target", "E", "A", "B", "alpha", "beta", "gamma"}],
//  "families": [{"family", "members", "E", ...}]}
struct LawFile {
  LawKind kind = LawKind::kShapleyLaw;
  std::vector<LawParams> laws;
  std::vector<FamilyLawParams> families;
};

LawFile ParseLawFile(std::istream& in);
LawFile ReadLawFile(const std::string& path);
std::string FormatLawFile(const LawFile& file);

// ---- calibration tables ---------------------------------------------------
// CSV with header task,language,loss,score.
struct CalibrationRow {
  std::string task;
  std::string language;
  double loss = 0.0;
  double score = 0.0;
};

std::vector<CalibrationRow> ParseCalibrationCsv(std::istream& in);

// ---- tool configuration (JSON) --------------------------------------------
struct IrdsExperimentConfig {
  SyntheticCorpusConfig corpus;
  TrainConfig train;
  CoalitionConvention convention = CoalitionConvention::kFixedBudget;
  int enumeration_cap = 16;
};

struct ToolConfig {
  std::optional<std::string> records_path;
  std::optional<std::string> transfer_path;
  std::optional<std::string> fixture_path;
  std::optional<std::string> families_path;
  FitConfig fit;
  OptimizerConfig optimizer;
  IrdsExperimentConfig irds;
  int precision = 17;  // significant digits in machine output

  // Throws InvalidArgument on non-positive tolerances or split fractions
  // outside (0, 1).
  void Validate() const;
};

ToolConfig ParseToolConfig(std::istream& in);
ToolConfig ReadToolConfig(const std::string& path);

// Family partition file: {"families": [{"id": "romance", "members": ["fr", "es"]}]}.
FamilySpec ReadFamilySpec(const std::string& path);

}  // namespace mixlaw
