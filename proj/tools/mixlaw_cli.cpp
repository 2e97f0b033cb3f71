// mixlaw: command-line front end for Shapley transfer estimation, scaling-law
// fitting, mixture optimization and downstream calibration.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixlaw/calib.hpp"
#include "mixlaw/core.hpp"
#include "mixlaw/fit.hpp"
#include "mixlaw/game.hpp"
#include "mixlaw/io.hpp"
#include "mixlaw/irds.hpp"
#include "mixlaw/laws.hpp"
#include "mixlaw/mixopt.hpp"

namespace {

using namespace mixlaw;
using Json = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kInternal = 1, kInputError = 2, kNumericError = 3, kInfeasibleError = 4 };

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_path;
  std::string format = "table";
};

struct Context {
  GlobalOptions global;
  ToolConfig config;

  bool machine() const { return global.format == "machine"; }
  std::uint64_t seed(std::uint64_t fallback) const { return global.seed.value_or(fallback); }

  std::string Num(double v) const {
    if (config.precision >= 17) return FormatNumber(v);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", config.precision, v);
    return buf;
  }

  void Emit(const std::string& text) const {
    if (global.output_path.empty()) {
      std::cout << text;
      std::cout.flush();
      return;
    }
    std::ofstream out(global.output_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write '" + global.output_path + "'");
    out << text;
  }
};

std::string Fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string Percent(double ratio) { return Fixed(100.0 * ratio, 1); }

std::string Significant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

// Column-aligned text table; the first column is left-aligned.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : rows_{std::move(header)} {}
  void Add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string Render() const {
    std::vector<std::size_t> width;
    for (const auto& row : rows_) {
      width.resize(std::max(width.size(), row.size()), 0);
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::string out;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      std::string line;
      for (std::size_t c = 0; c < rows_[r].size(); ++c) {
        const std::string& cell = rows_[r][c];
        const std::string pad(width[c] - cell.size(), ' ');
        line += c == 0 ? cell + pad : "  " + pad + cell;
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + '\n';
      if (r == 0) {
        std::size_t total = 0;
        for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c == 0 ? 0 : 2);
        out += std::string(total, '-') + '\n';
      }
    }
    return out;
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::string Require(const std::string& flag, const std::optional<std::string>& from_config, const char* name) {
  if (!flag.empty()) return flag;
  if (from_config) return *from_config;
  throw Error(ErrorCode::kInvalidArgument, std::string("missing input: ") + name);
}

std::map<std::string, double> ParseAssignments(const std::string& text) {
  std::map<std::string, double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, "expected id=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || value.empty()) throw Error(ErrorCode::kParseError, "bad number '" + value + "'");
    out[key] = v;
  }
  return out;
}

std::map<std::string, double> ReadNumberMap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return j.get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
  std::string records;
};

int CmdIngest(const Context& ctx, const IngestArgs& args) {
  const auto records = ReadRunRecords(Require(args.records, ctx.config.records_path, "--records"));
  std::vector<RunRecord> kept;
  std::vector<std::pair<std::string, std::string>> excluded;
  for (const auto& r : records) {
    if (auto reason = ExclusionReason(r, ctx.config.fit.min_subset_tokens)) {
      excluded.emplace_back(r.run_id, *reason);
    } else {
      kept.push_back(r);
    }
  }
  for (const auto& [id, reason] : excluded) std::cerr << "excluded " << id << ": " << reason << '\n';
  if (ctx.machine()) {
    std::ostringstream out;
    WriteRunRecords(out, kept);
    ctx.Emit(out.str());
    return kOk;
  }
  Table table({"run_id", "N", "D", "languages", "status"});
  for (const auto& r : records) {
    std::string status = "kept";
    for (const auto& [id, reason] : excluded) {
      if (id == r.run_id) status = "excluded: " + reason;
    }
    table.Add({r.run_id, ctx.Num(r.N), ctx.Num(r.D), std::to_string(r.mixture.size()), status});
  }
  ctx.Emit(table.Render() + std::to_string(kept.size()) + " kept, " + std::to_string(excluded.size()) +
           " excluded\n");
  return kOk;
}

// ---- shapley ----------------------------------------------------------------

struct ShapleyArgs {
  std::string mode = "exact";
  std::string fixture;
  long samples = 10000;
  bool raw = false;
  int cap = 16;
};

SyntheticCorpusConfig DefaultCorpus(SyntheticCorpusConfig c) {
  if (c.languages.size() == 0) {
    c.languages = LanguageSet({"l0", "l1", "l2"});
    c.transfer_structure = Matrix(3, 3);
    c.transfer_structure << 1.0, 0.6, 0.1, 0.6, 1.0, 0.1, 0.1, 0.1, 1.0;
  }
  return c;
}

IrdsExperimentConfig Experiment(const Context& ctx) {
  IrdsExperimentConfig x = ctx.config.irds;
  x.corpus = DefaultCorpus(x.corpus);
  x.corpus.seed = ctx.seed(x.corpus.seed);
  x.train.seed = ctx.seed(x.train.seed);
  return x;
}

std::string RenderMatrix(const Context& ctx, const LanguageSet& rows, const LanguageSet& cols, const Matrix& m) {
  if (ctx.machine()) return FormatMatrixCsv(rows, cols, m);
  std::vector<std::string> header{"source/target"};
  header.insert(header.end(), cols.ids().begin(), cols.ids().end());
  Table table(header);
  for (int r = 0; r < rows.size(); ++r) {
    std::vector<std::string> row{rows[r]};
    for (int c = 0; c < cols.size(); ++c) row.push_back(Fixed(m(r, c), 4));
    table.Add(row);
  }
  return table.Render();
}

int CmdShapley(const Context& ctx, const ShapleyArgs& args) {
  ShapleyMatrix sv{};
  if (args.mode == "irds") {
    const IrdsExperimentConfig x = Experiment(ctx);
    const SyntheticCorpus corpus = GenerateCorpus(x.corpus);
    sv = IrdsToShapley(TrainWithIrds(corpus, x.train).accumulator);
  } else {
    const CoalitionFixture fixture = ReadCoalitionFixture(Require(args.fixture, ctx.config.fixture_path, "--fixture"));
    const CoalitionGame game = fixture.Game();
    if (args.mode == "exact") {
      sv = ExactShapley(game, ShapleyOptions{args.cap});
      AxiomOptions axiom_options;
      axiom_options.seed = ctx.seed(0);
      const AxiomReport report = VerifyAxioms(game, sv, std::nullopt, axiom_options);
      for (const auto& check : report.checks) {
        std::cerr << "axiom " << check.name << ": "
                  << (!check.applicable ? "n/a" : check.passed ? "pass" : "FAIL") << '\n';
      }
    } else if (args.mode == "montecarlo") {
      sv = MonteCarloShapley(game, args.samples, ctx.seed(0));
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + args.mode + "'");
    }
  }
  if (args.raw) {
    ctx.Emit(RenderMatrix(ctx, sv.players, sv.targets, sv.values));
  } else {
    const TransferMatrix t = NormalizeShapley(sv);
    ctx.Emit(RenderMatrix(ctx, t.languages(), t.languages(), t.values()));
  }
  return kOk;
}

// ---- fit ----------------------------------------------------------------------

struct FitArgs {
  std::string records;
  std::string law = "shapleylaw";
  std::vector<std::string> targets;
  std::string transfer;
  std::string families;
  std::string plot;
};

LawContext LoadContext(const Context& ctx, LawKind kind, const std::string& transfer, const std::string& families) {
  LawContext lc;
  if (kind == LawKind::kShapleyLaw) {
    lc.transfer = ReadTransferMatrix(Require(transfer, ctx.config.transfer_path, "--transfer"));
  }
  if (kind == LawKind::kFamilyLaw) {
    lc.families = ReadFamilySpec(Require(families, ctx.config.families_path, "--families"));
  }
  return lc;
}

int CmdFit(const Context& ctx, const FitArgs& args) {
  const auto records = ReadRunRecords(Require(args.records, ctx.config.records_path, "--records"));
  const LawKind kind = ParseLawKind(args.law);
  const LawContext lc = LoadContext(ctx, kind, args.transfer, args.families);
  std::vector<std::string> targets = args.targets;
  if (targets.empty()) {
    std::set<std::string> seen;
    for (const auto& r : records) {
      for (const auto& [lang, loss] : r.losses) seen.insert(lang);
    }
    targets.assign(seen.begin(), seen.end());
  }
  if (targets.empty()) throw Error(ErrorCode::kEmptyInput, "records carry no losses");

  FitConfig config = ctx.config.fit;
  config.seed = ctx.seed(config.seed);
  LawFile file;
  file.kind = kind;
  std::map<std::string, std::vector<FamilyLawParams>> by_family;
  Json diagnostics = Json::object();
  Table table({"target", "E", "A", "B", "alpha", "beta", "gamma", "PE", "R2", "n"});
  std::string plot = "run_id,target,factor,observed,predicted,N,D\n";
  for (const auto& target : targets) {
    const FitResult fit = FitLaw(records, kind, target, lc, config);
    const LawParams& p = fit.params;
    const FitDiagnostics& d = fit.diagnostics;
    file.laws.push_back(p);
    if (fit.family) by_family[fit.family->id].push_back(fit.AsFamilyParams());
    for (const auto& [id, reason] : d.excluded) std::cerr << target << ": excluded " << id << ": " << reason << '\n';
    if (!d.converged) std::cerr << target << ": best start did not converge\n";

    Json dj;
    dj["pe_fit"] = d.pe_fit;
    dj["r_squared"] = std::isfinite(d.r_squared) ? Json(d.r_squared) : Json(nullptr);
    if (d.pe_test) dj["pe_test"] = *d.pe_test;
    if (d.r_squared_test) dj["r_squared_test"] = std::isfinite(*d.r_squared_test) ? Json(*d.r_squared_test) : Json(nullptr);
    dj["n_fit"] = d.n_fit;
    dj["n_test"] = d.n_test;
    dj["objective"] = d.objective;
    dj["converged"] = d.converged;
    dj["outliers"] = d.outlier_ids;
    dj["excluded"] = Json::array();
    for (const auto& [id, reason] : d.excluded) dj["excluded"].push_back({{"run_id", id}, {"reason", reason}});
    diagnostics[target] = dj;

    table.Add({target, Fixed(p.E, 4), Significant(p.A, 5), Significant(p.B, 5), Fixed(p.alpha, 4), Fixed(p.beta, 4),
               Fixed(p.gamma, 4), Fixed(d.pe_fit, 4), Fixed(d.r_squared, 4), std::to_string(d.n_fit)});

    std::set<std::string> fitted(d.fit_ids.begin(), d.fit_ids.end());
    for (const auto& r : records) {
      if (!fitted.count(r.run_id)) continue;
      plot += r.run_id + "," + target + "," + FormatNumber(MixtureFactor(r, kind, target, lc)) + "," +
              FormatNumber(r.losses.at(target)) + "," + FormatNumber(PredictRecord(fit, r, lc)) + "," +
              FormatNumber(r.N) + "," + FormatNumber(r.D) + "\n";
    }
  }
  // A family law is emitted once per family when a single target represents it.
  for (const auto& [family, params] : by_family) {
    if (params.size() == 1) file.families.push_back(params.front());
  }
  if (!args.plot.empty()) {
    std::ofstream out(args.plot, std::ios::binary);
    if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write '" + args.plot + "'");
    out << plot;
  }
  if (ctx.machine()) {
    Json j = Json::parse(FormatLawFile(file));
    j["diagnostics"] = diagnostics;
    ctx.Emit(j.dump(2) + "\n");
  } else {
    ctx.Emit(table.Render());
  }
  return kOk;
}

// ---- predict ------------------------------------------------------------------

struct PredictArgs {
  std::string laws;
  std::string transfer;
  std::string families;
  std::string records;
  std::string mixture;
  double N = 0.0;
  double D = 0.0;
};

int CmdPredict(const Context& ctx, const PredictArgs& args) {
  const LawFile file = ReadLawFile(args.laws);
  const LawContext lc = LoadContext(ctx, file.kind, args.transfer, args.families);
  std::vector<RunRecord> points;
  if (!args.records.empty()) {
    points = ReadRunRecords(args.records);
  } else {
    if (args.mixture.empty()) throw Error(ErrorCode::kInvalidArgument, "give --records or --mixture with --N and --D");
    RunRecord r;
    r.run_id = "-";
    r.N = args.N;
    r.D = args.D;
    r.mixture = ParseAssignments(args.mixture);
    r.Validate();
    points.push_back(std::move(r));
  }
  std::string machine = "run_id,target,factor,predicted,observed\n";
  Table table({"run_id", "target", "factor", "predicted", "observed"});
  std::vector<double> predicted;
  std::vector<double> observed;
  for (const auto& r : points) {
    for (const auto& law : file.laws) {
      FitResult fit;
      fit.kind = file.kind;
      fit.params = law;
      const double factor = MixtureFactor(r, file.kind, law.target, lc);
      const double value = PredictRecord(fit, r, lc);
      const auto obs = r.losses.find(law.target);
      const bool has_obs = obs != r.losses.end();
      if (has_obs) {
        predicted.push_back(value);
        observed.push_back(obs->second);
      }
      machine += r.run_id + "," + law.target + "," + ctx.Num(factor) + "," + ctx.Num(value) + "," +
                 (has_obs ? ctx.Num(obs->second) : "") + "\n";
      table.Add({r.run_id, law.target, Fixed(factor, 4), Fixed(value, 3), has_obs ? Fixed(obs->second, 3) : "-"});
    }
  }
  std::string footer;
  if (!observed.empty()) {
    const PredictionError e = ComputePredictionError(predicted, observed);
    footer = "PE " + Fixed(e.pe, 4) + "  R2 " + Fixed(e.r_squared, 4) + "\n";
  }
  ctx.Emit(ctx.machine() ? machine : table.Render() + footer);
  return kOk;
}

// ---- optimize -----------------------------------------------------------------

struct OptimizeArgs {
  std::string laws;
  std::string transfer;
  std::string families;
  double N = 0.0;
  double D = 0.0;
  std::string weights = "unweighted";
  std::string weights_file;
  std::string monolingual;
  std::string budget;
  std::string tokens;
  std::string baseline = "none";
  double alpha = 0.5;
};

int CmdOptimize(const Context& ctx, const OptimizeArgs& args) {
  std::optional<LawFile> file;
  if (!args.laws.empty()) file = ReadLawFile(args.laws);
  std::optional<TransferMatrix> transfer;
  if (!args.transfer.empty() || ctx.config.transfer_path) {
    transfer = ReadTransferMatrix(Require(args.transfer, ctx.config.transfer_path, "--transfer"));
  }
  std::optional<std::map<std::string, double>> tokens;
  if (!args.tokens.empty()) tokens = ReadNumberMap(args.tokens);

  LanguageSet languages;
  if (transfer) {
    languages = transfer->languages();
  } else if (tokens) {
    std::vector<std::string> ids;
    for (const auto& [id, n] : *tokens) ids.push_back(id);
    languages = LanguageSet(ids);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "need --transfer or --tokens to know the languages");
  }
  auto token_vector = [&]() {
    if (!tokens) throw Error(ErrorCode::kInvalidArgument, "baseline '" + args.baseline + "' needs --tokens");
    Vector v = Vector::Zero(languages.size());
    for (const auto& [id, n] : *tokens) v(languages.IndexOf(id)) = n;
    return v;
  };

  std::optional<CorpusBudget> budget;
  if (!args.budget.empty()) budget = CorpusBudget{ReadNumberMap(args.budget), args.D};
  const bool has_objective = file && transfer && !file->laws.empty();
  auto need_objective = [&]() {
    if (!has_objective) throw Error(ErrorCode::kInvalidArgument, "baseline '" + args.baseline + "' needs --laws and --transfer");
  };

  PreferenceWeights weights;
  if (file) {
    std::vector<std::string> ids;
    for (const auto& law : file->laws) ids.push_back(law.target);
    for (const auto& fam : file->families) {
      for (const auto& m : fam.members) {
        if (std::find(ids.begin(), ids.end(), m) == ids.end()) ids.push_back(m);
      }
    }
    if (!ids.empty()) {
      if (args.weights == "custom") {
        weights.mode = WeightMode::kCustom;
        weights.w = ReadNumberMap(args.weights_file);
      } else if (args.weights == "normalized") {
        weights = MakeWeights(WeightMode::kNormalized, LanguageSet(ids),
                              args.monolingual.empty() ? std::map<std::string, double>{}
                                                       : ReadNumberMap(args.monolingual));
      } else if (args.weights == "unweighted") {
        weights = MakeWeights(WeightMode::kUnweighted, LanguageSet(ids));
      } else {
        throw Error(ErrorCode::kInvalidArgument, "unknown weight mode '" + args.weights + "'");
      }
      weights.Validate();
    }
  }

  std::optional<Mixture> mixture;
  std::optional<OptimizationResult> solved;
  std::vector<std::string> flags;
  const std::string& b = args.baseline;
  if (b == "none") {
    need_objective();
    solved = OptimizeSimplex(file->laws, weights, *transfer, args.N, args.D, budget, ctx.config.optimizer);
    mixture = solved->mixture;
    if (!solved->converged) std::cerr << "warning: iteration cap reached; reporting the best iterate\n";
  } else if (b == "uniform") {
    mixture = Mixture::Uniform(languages);
  } else if (b == "smoothed") {
    mixture = SmoothedSampling(languages, token_vector(), args.alpha);
  } else if (b == "familylaw") {
    if (!file || file->families.empty()) throw Error(ErrorCode::kInvalidArgument, "familylaw baseline needs family laws");
    mixture = FamilyLawOptimize(languages, file->families, weights, token_vector(), args.alpha, args.N, args.D,
                                ctx.config.optimizer);
  } else if (b == "closed-form" || b == "corrected") {
    need_objective();
    std::vector<LawParams> ordered;
    Vector gammas(languages.size());
    for (int i = 0; i < languages.size(); ++i) {
      auto it = std::find_if(file->laws.begin(), file->laws.end(),
                             [&](const LawParams& p) { return p.target == languages[i]; });
      if (it == file->laws.end()) throw Error(ErrorCode::kMissingTarget, "no law for '" + languages[i] + "'");
      ordered.push_back(*it);
      gammas(i) = it->gamma;
    }
    mixture = DiagonalClosedForm(languages, ordered, weights, transfer->values().diagonal(), args.N, args.D);
    if (b == "corrected") {
      CorrectionResult corrected = FirstOrderCorrection(*mixture, *transfer, gammas);
      for (const auto& id : corrected.clamped) flags.push_back("clamped:" + id);
      mixture = corrected.mixture;
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown baseline '" + b + "'");
  }
  std::vector<std::string> active;
  if (budget && !solved) {
    const ClipResult clipped = ClipAndRedistribute(*mixture, *budget);
    mixture = clipped.mixture;
    active = clipped.active_set;
  }
  if (solved) active = solved->active_set;

  std::optional<double> objective;
  std::optional<double> kkt;
  std::map<std::string, double> losses;
  if (has_objective) {
    objective = MixtureObjective(*mixture, file->laws, weights, *transfer, args.N, args.D);
    const Vector caps = budget ? budget->Caps(languages) : Vector::Constant(languages.size(), HUGE_VAL);
    kkt = solved ? solved->kkt_residual
                 : KktResidual(mixture->p(),
                               MixtureObjectiveGradient(*mixture, file->laws, weights, *transfer, args.N, args.D), caps);
    if (file->kind == LawKind::kShapleyLaw) {
      for (const auto& law : file->laws) {
        losses[law.target] = ShapleyLawPredict(law, *transfer, args.N, args.D, *mixture).predicted_loss;
      }
    }
  }

  if (ctx.machine()) {
    Json j;
    j["baseline"] = b;
    j["mixture"] = Json::object();
    for (int i = 0; i < languages.size(); ++i) j["mixture"][languages[i]] = (*mixture)[i];
    j["percent"] = Json::object();
    for (int i = 0; i < languages.size(); ++i) j["percent"][languages[i]] = Percent((*mixture)[i]);
    if (!losses.empty()) j["predicted_loss"] = losses;
    j["objective"] = objective ? Json(*objective) : Json(nullptr);
    j["kkt_residual"] = kkt ? Json(*kkt) : Json(nullptr);
    if (solved) {
      j["iterations"] = solved->iterations;
      j["converged"] = solved->converged;
    }
    j["active_set"] = active;
    j["flags"] = flags;
    ctx.Emit(j.dump(2) + "\n");
    return kOk;
  }
  Table table({"language", "ratio (%)", "loss"});
  for (int i = 0; i < languages.size(); ++i) {
    auto it = losses.find(languages[i]);
    table.Add({languages[i], Percent((*mixture)[i]), it == losses.end() ? "-" : Fixed(it->second, 3)});
  }
  std::string out = table.Render();
  if (objective) out += "objective     " + Fixed(*objective, 6) + "\n";
  if (kkt) out += "kkt_residual  " + Significant(*kkt, 3) + "\n";
  std::string joined;
  for (const auto& id : active) joined += (joined.empty() ? "" : ",") + id;
  out += "active_set    " + (joined.empty() ? std::string("-") : joined) + "\n";
  for (const auto& f : flags) out += "flag          " + f + "\n";
  ctx.Emit(out);
  return kOk;
}

// ---- calibrate ----------------------------------------------------------------

struct CalibrateArgs {
  std::string input;
  std::string transform = "auto";
  bool pooled = false;
};

int CmdCalibrate(const Context& ctx, const CalibrateArgs& args) {
  std::ifstream in(args.input);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open '" + args.input + "'");
  const auto rows = ParseCalibrationCsv(in);
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.task, args.pooled ? "*" : r.language}];
    g.first.push_back(r.loss);
    g.second.push_back(r.score);
  }
  std::string machine = "task,language,n,pearson_r,transform,r_squared,a,b\n";
  Table table({"task", "language", "n", "pearson r", "g", "R2", "a", "b"});
  for (const auto& [key, data] : groups) {
    const CalibrationModel m = args.transform == "auto"
                                   ? SelectTransform(data.first, data.second).best
                                   : FitCalibration(data.first, data.second, ParseTransform(args.transform));
    const std::string n = std::to_string(data.first.size()) + (m.underdetermined ? "*" : "");
    machine += key.first + "," + key.second + "," + n + "," + ctx.Num(m.pearson_r) + "," + TransformName(m.transform) +
               "," + ctx.Num(m.r_squared) + "," + ctx.Num(m.a) + "," + ctx.Num(m.b) + "\n";
    table.Add({key.first, key.second, n, Fixed(m.pearson_r, 3), TransformName(m.transform), Fixed(m.r_squared, 3),
               Fixed(m.a, 3), Fixed(m.b, 3)});
  }
  ctx.Emit(ctx.machine() ? machine : table.Render());
  return kOk;
}

// ---- irds-run / compare-sv ----------------------------------------------------

struct IrdsArgs {
  std::string exact_output;
  bool normalize = false;
};

int CmdIrdsRun(const Context& ctx, const IrdsArgs& args) {
  const IrdsExperimentConfig x = Experiment(ctx);
  const SyntheticCorpus corpus = GenerateCorpus(x.corpus);
  const IrdsRun run = TrainWithIrds(corpus, x.train);
  const ShapleyMatrix irds = IrdsToShapley(run.accumulator);
  if (!args.exact_output.empty()) {
    const ShapleyMatrix exact =
        ExactShapley(ExactCoalitionPayoffs(corpus, x.train, x.convention, x.enumeration_cap),
                     ShapleyOptions{x.enumeration_cap});
    std::ofstream out(args.exact_output, std::ios::binary);
    if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write '" + args.exact_output + "'");
    out << FormatMatrixCsv(exact.players, exact.targets, exact.values);
    const SvSimilarity sim = CompareSv(exact, irds);
    std::cerr << "exact vs irds: cosine " << Fixed(sim.cosine, 4) << ", pearson " << Fixed(sim.pearson, 4) << '\n';
  }
  if (args.normalize) {
    const TransferMatrix t = NormalizeShapley(irds);
    ctx.Emit(RenderMatrix(ctx, t.languages(), t.languages(), t.values()));
  } else {
    ctx.Emit(RenderMatrix(ctx, irds.players, irds.targets, irds.values));
  }
  return kOk;
}

struct CompareArgs {
  std::string a;
  std::string b;
  bool exclude_diagonal = false;
};

int CmdCompareSv(const Context& ctx, const CompareArgs& args) {
  const SvSimilarity sim = CompareSv(ReadShapleyMatrix(args.a), ReadShapleyMatrix(args.b), args.exclude_diagonal);
  if (ctx.machine()) {
    ctx.Emit("cosine,pearson\n" + ctx.Num(sim.cosine) + "," + ctx.Num(sim.pearson) + "\n");
  } else {
    Table table({"metric", "value"});
    table.Add({"cosine", Fixed(sim.cosine, 4)});
    table.Add({"pearson", Fixed(sim.pearson, 4)});
    ctx.Emit(table.Render());
  }
  return kOk;
}

int ExitFor(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kInput: return kInputError;
    case ErrorCategory::kNumeric: return kNumericError;
    case ErrorCategory::kInfeasible: return kInfeasibleError;
  }
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley-based cross-lingual transfer, scaling laws and mixture optimization"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions global;
  app.add_option("--config", global.config_path, "JSON configuration file");
  app.add_option("--seed", global.seed, "Random seed (overrides the config)");
  app.add_option("--output", global.output_path, "Write the result here instead of stdout");
  app.add_option("--format", global.format, "Output format")->check(CLI::IsMember({"table", "machine"}));

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate run records and apply the exclusion rule");
  ingest_cmd->add_option("--records", ingest.records, "Run records (JSON lines)");

  ShapleyArgs shapley;
  auto* shapley_cmd = app.add_subcommand("shapley", "Shapley values of a coalition game");
  shapley_cmd->add_option("--mode", shapley.mode)->check(CLI::IsMember({"exact", "montecarlo", "irds"}));
  shapley_cmd->add_option("--fixture", shapley.fixture, "Coalition fixture file");
  shapley_cmd->add_option("--samples", shapley.samples, "Permutations for montecarlo mode");
  shapley_cmd->add_option("--cap", shapley.cap, "Largest player count for exact enumeration");
  shapley_cmd->add_flag("--raw", shapley.raw, "Emit raw values instead of the normalized transfer matrix");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a scaling law per target language");
  fit_cmd->add_option("--records", fit.records);
  fit_cmd->add_option("--law", fit.law)->check(CLI::IsMember({"chinchilla", "shapleylaw", "familylaw"}));
  fit_cmd->add_option("--target", fit.targets, "Target language (repeatable; default all)");
  fit_cmd->add_option("--transfer", fit.transfer, "Transfer matrix CSV");
  fit_cmd->add_option("--families", fit.families, "Family partition JSON");
  fit_cmd->add_option("--plot", fit.plot, "Write factor/observed/predicted columns here");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict losses from fitted laws");
  predict_cmd->add_option("--laws", predict.laws)->required();
  predict_cmd->add_option("--transfer", predict.transfer);
  predict_cmd->add_option("--families", predict.families);
  predict_cmd->add_option("--records", predict.records, "Predict for every record");
  predict_cmd->add_option("--mixture", predict.mixture, "Mixture as id=ratio,...");
  predict_cmd->add_option("--N", predict.N);
  predict_cmd->add_option("--D", predict.D);

  OptimizeArgs optimize;
  auto* optimize_cmd = app.add_subcommand("optimize", "Optimize mixture ratios or evaluate a baseline");
  optimize_cmd->add_option("--laws", optimize.laws);
  optimize_cmd->add_option("--transfer", optimize.transfer);
  optimize_cmd->add_option("--N", optimize.N);
  optimize_cmd->add_option("--D", optimize.D);
  optimize_cmd->add_option("--weights", optimize.weights)->check(CLI::IsMember({"unweighted", "normalized", "custom"}));
  optimize_cmd->add_option("--weights-file", optimize.weights_file, "Custom weights JSON");
  optimize_cmd->add_option("--monolingual-losses", optimize.monolingual, "JSON map used by normalized weights");
  optimize_cmd->add_option("--budget", optimize.budget, "Available tokens per language (JSON)");
  optimize_cmd->add_option("--tokens", optimize.tokens, "Corpus tokens per language (JSON)");
  optimize_cmd->add_option("--baseline", optimize.baseline)
      ->check(CLI::IsMember({"none", "uniform", "smoothed", "familylaw", "closed-form", "corrected"}));
  optimize_cmd->add_option("--alpha", optimize.alpha, "Smoothing exponent");

  CalibrateArgs calibrate;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit score = a*g(loss) + b");
  calibrate_cmd->add_option("--input", calibrate.input, "CSV task,language,loss,score")->required();
  calibrate_cmd->add_option("--transform", calibrate.transform, "auto, l, -l, log(l), exp(-l) or 1/l");
  calibrate_cmd->add_flag("--pooled", calibrate.pooled, "One fit per task across languages");

  IrdsArgs irds;
  auto* irds_cmd = app.add_subcommand("irds-run", "Toy training run with in-run Shapley accumulation");
  irds_cmd->add_option("--exact-output", irds.exact_output, "Also train every coalition and write exact values");
  irds_cmd->add_flag("--normalize", irds.normalize);

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare-sv", "Cosine and Pearson similarity of two Shapley matrices");
  compare_cmd->add_option("a", compare.a)->required();
  compare_cmd->add_option("b", compare.b)->required();
  compare_cmd->add_flag("--exclude-diagonal", compare.exclude_diagonal);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    Context ctx{global, global.config_path.empty() ? ToolConfig{} : ReadToolConfig(global.config_path)};
    if (*ingest_cmd) return CmdIngest(ctx, ingest);
    if (*shapley_cmd) return CmdShapley(ctx, shapley);
    if (*fit_cmd) return CmdFit(ctx, fit);
    if (*predict_cmd) return CmdPredict(ctx, predict);
    if (*optimize_cmd) return CmdOptimize(ctx, optimize);
    if (*calibrate_cmd) return CmdCalibrate(ctx, calibrate);
    if (*irds_cmd) return CmdIrdsRun(ctx, irds);
    if (*compare_cmd) return CmdCompareSv(ctx, compare);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitFor(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
