#include "mixlaw/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace mixlaw {

namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

std::ifstream OpenInput(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open '" + path + "'");
  return in;
}

Error ParseFailure(int line, const std::string& what) {
  return Error(ErrorCode::kParseError, "line " + std::to_string(line) + ": " + what);
}

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> Split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, sep)) out.push_back(Trim(cell));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> Tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

bool Skippable(const std::string& line) {
  const std::string t = Trim(line);
  return t.empty() || t[0] == '#';
}

double ParseDouble(const std::string& text, int line) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (!text.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) throw ParseFailure(line, "not a number: '" + text + "'");
  return value;
}

double NumberField(const Json& obj, const char* key, int line) {
  if (!obj.contains(key)) throw ParseFailure(line, std::string("missing field '") + key + "'");
  const Json& v = obj.at(key);
  if (!v.is_number()) throw ParseFailure(line, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

std::map<std::string, double> NumberMap(const Json& obj, const char* key, int line) {
  if (!obj.contains(key) || !obj.at(key).is_object()) {
    throw ParseFailure(line, std::string("field '") + key + "' must be an object");
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : obj.at(key).items()) {
    if (!v.is_number()) throw ParseFailure(line, std::string(key) + "." + k + " must be a number");
    out[k] = v.get<double>();
  }
  return out;
}

Coalition ParseCoalition(const std::string& text, const LanguageSet& languages, int line) {
  Coalition s = 0;
  for (const auto& id : Split(text, ',')) {
    const int i = languages.Find(id);
    if (i < 0) throw ParseFailure(line, "unknown language '" + id + "'");
    s |= Coalition{1} << i;
  }
  return s;
}

template <typename T>
void Assign(const Json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

Json ParseJson(std::istream& in) {
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

LawParams LawFromJson(const Json& j, int index) {
  const int line = index + 1;
  LawParams p;
  if (!j.contains("target") || !j.at("target").is_string()) throw ParseFailure(line, "law needs a 'target'");
  p.target = j.at("target").get<std::string>();
  p.E = NumberField(j, "E", line);
  p.A = NumberField(j, "A", line);
  p.B = NumberField(j, "B", line);
  p.alpha = NumberField(j, "alpha", line);
  p.beta = NumberField(j, "beta", line);
  p.gamma = j.contains("gamma") ? NumberField(j, "gamma", line) : 0.0;
  p.Validate();
  return p;
}

}  // namespace

std::string FormatNumber(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::vector<RunRecord> ParseRunRecords(std::istream& in) {
  std::vector<RunRecord> records;
  std::string text;
  for (int line = 1; std::getline(in, text); ++line) {
    if (Skippable(text)) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ParseFailure(line, e.what());
    }
    if (!j.is_object()) throw ParseFailure(line, "record must be a JSON object");
    RunRecord r;
    if (!j.contains("run_id") || !j.at("run_id").is_string()) throw ParseFailure(line, "missing string 'run_id'");
    r.run_id = j.at("run_id").get<std::string>();
    r.N = NumberField(j, "N", line);
    r.D = NumberField(j, "D", line);
    r.mixture = NumberMap(j, "mixture", line);
    r.losses = NumberMap(j, "losses", line);
    try {
      r.Validate();
      if (r.mixture.empty()) throw Error(ErrorCode::kInvariantViolation, "empty mixture");
      double sum = 0.0;
      for (const auto& [lang, ratio] : r.mixture) {
        if (!std::isfinite(ratio) || ratio < 0.0) {
          throw Error(ErrorCode::kInvariantViolation, "invalid ratio for '" + lang + "'");
        }
        sum += ratio;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw Error(ErrorCode::kInvariantViolation, "mixture sums to " + FormatNumber(sum));
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        for (auto& [lang, ratio] : r.mixture) ratio /= sum;
      }
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line) + " (run '" + r.run_id + "'): " + e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<RunRecord> ReadRunRecords(const std::string& path) {
  auto in = OpenInput(path);
  return ParseRunRecords(in);
}

std::string FormatRunRecord(const RunRecord& record) {
  OrderedJson j;
  j["run_id"] = record.run_id;
  j["N"] = record.N;
  j["D"] = record.D;
  j["mixture"] = OrderedJson::object();
  for (const auto& [k, v] : record.mixture) j["mixture"][k] = v;
  j["losses"] = OrderedJson::object();
  for (const auto& [k, v] : record.losses) j["losses"][k] = v;
  return j.dump();
}

void WriteRunRecords(std::ostream& out, const std::vector<RunRecord>& records) {
  for (const auto& r : records) out << FormatRunRecord(r) << '\n';
}

LabeledMatrix ParseMatrixCsv(std::istream& in) {
  std::string text;
  int line = 0;
  std::vector<std::string> header;
  while (std::getline(in, text)) {
    ++line;
    if (Skippable(text)) continue;
    header = Split(Trim(text), ',');
    break;
  }
  if (header.size() < 2) throw Error(ErrorCode::kParseError, "matrix file needs a header row");
  std::vector<std::string> cols(header.begin() + 1, header.end());
  std::vector<std::string> rows;
  std::vector<std::vector<double>> data;
  while (std::getline(in, text)) {
    ++line;
    if (Skippable(text)) continue;
    const auto cells = Split(Trim(text), ',');
    if (cells.size() != header.size()) {
      throw ParseFailure(line, "expected " + std::to_string(header.size()) + " cells");
    }
    rows.push_back(cells[0]);
    std::vector<double> values;
    for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(ParseDouble(cells[c], line));
    data.push_back(std::move(values));
  }
  LabeledMatrix out{LanguageSet(rows), LanguageSet(cols), Matrix(rows.size(), cols.size())};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) out.values(r, c) = data[r][c];
  }
  return out;
}

std::string FormatMatrixCsv(const LanguageSet& rows, const LanguageSet& cols, const Matrix& values) {
  std::string out = "source/target";
  for (const auto& id : cols.ids()) out += "," + id;
  out += '\n';
  for (int r = 0; r < rows.size(); ++r) {
    out += rows[r];
    for (int c = 0; c < cols.size(); ++c) out += "," + FormatNumber(values(r, c));
    out += '\n';
  }
  return out;
}

TransferMatrix ReadTransferMatrix(const std::string& path) {
  auto in = OpenInput(path);
  LabeledMatrix m = ParseMatrixCsv(in);
  if (!(m.rows == m.cols)) {
    throw Error(ErrorCode::kLanguageMismatch, "transfer matrix rows and columns list different languages");
  }
  return TransferMatrix(m.rows, std::move(m.values));
}

ShapleyMatrix ReadShapleyMatrix(const std::string& path) {
  auto in = OpenInput(path);
  LabeledMatrix m = ParseMatrixCsv(in);
  Vector grand = m.values.colwise().sum().transpose();
  return {m.rows, m.cols, std::move(m.values), std::move(grand), Matrix()};
}

CoalitionGame CoalitionFixture::Game() const {
  auto table = std::make_shared<const std::map<std::pair<Coalition, int>, double>>(payoffs);
  auto w = std::make_shared<const std::optional<Matrix>>(weights);
  auto ids = languages;
  return CoalitionGame(languages, [table, w, ids](Coalition s, int j) {
    if (auto it = table->find({s, j}); it != table->end()) return it->second;
    if (!w->has_value()) {
      throw Error(ErrorCode::kInvalidArgument, "fixture has no payoff for " + DescribeCoalition(s, ids) +
                                                   " on target '" + ids[j] + "'");
    }
    double total = 0.0;
    for (int i = 0; i < ids.size(); ++i) {
      if (Contains(s, i)) total += (**w)(i, j);
    }
    return 1.0 - std::exp(-total);
  });
}

CoalitionFixture ParseCoalitionFixture(std::istream& in) {
  std::optional<CoalitionFixture> fx;
  std::string text;
  for (int line = 1; std::getline(in, text); ++line) {
    if (const auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    const auto tok = Tokens(text);
    if (tok.empty()) continue;
    if (tok[0] == "languages") {
      if (fx) throw ParseFailure(line, "languages declared twice");
      if (tok.size() != 2) throw ParseFailure(line, "expected: languages id1,id2,...");
      try {
        fx = CoalitionFixture{LanguageSet(Split(tok[1], ',')), {}, std::nullopt};
      } catch (const Error& e) {
        throw ParseFailure(line, e.what());
      }
      if (fx->languages.size() > kMaxPlayers) throw ParseFailure(line, "too many languages");
      continue;
    }
    if (!fx) throw ParseFailure(line, "the first entry must declare the languages");
    const LanguageSet& langs = fx->languages;
    if (tok[0] == "weight") {
      if (tok.size() != 4) throw ParseFailure(line, "expected: weight source target value");
      const int src = langs.Find(tok[1]);
      const int tgt = langs.Find(tok[2]);
      if (src < 0 || tgt < 0) throw ParseFailure(line, "unknown language in weight entry");
      const double v = ParseDouble(tok[3], line);
      if (!(v >= 0.0) || !std::isfinite(v)) throw ParseFailure(line, "weights must be non-negative");
      if (!fx->weights) fx->weights = Matrix::Zero(langs.size(), langs.size());
      (*fx->weights)(src, tgt) = v;
      continue;
    }
    if (tok.size() != 3) throw ParseFailure(line, "expected: coalition target payoff");
    const Coalition s = ParseCoalition(tok[0], langs, line);
    const int target = langs.Find(tok[1]);
    if (target < 0) throw ParseFailure(line, "unknown target '" + tok[1] + "'");
    if (s == 0) throw ParseFailure(line, "empty coalition");
    if (!fx->payoffs.emplace(std::make_pair(s, target), ParseDouble(tok[2], line)).second) {
      throw ParseFailure(line, "duplicate payoff entry");
    }
  }
  if (!fx) throw Error(ErrorCode::kParseError, "fixture declares no languages");
  return *fx;
}

CoalitionFixture ReadCoalitionFixture(const std::string& path) {
  auto in = OpenInput(path);
  return ParseCoalitionFixture(in);
}

LawFile ParseLawFile(std::istream& in) {
  const Json j = ParseJson(in);
  LawFile out;
  try {
    out.kind = ParseLawKind(j.value("kind", std::string("shapleylaw")));
    if (j.contains("laws")) {
      int index = 0;
      for (const auto& item : j.at("laws")) out.laws.push_back(LawFromJson(item, index++));
    }
    if (j.contains("families")) {
      int index = 0;
      for (const auto& item : j.at("families")) {
        FamilyLawParams f;
        f.family = item.at("family").get<std::string>();
        f.members = item.at("members").get<std::vector<std::string>>();
        const LawParams p = LawFromJson(Json{{"target", f.family},
                                             {"E", item.at("E")},
                                             {"A", item.at("A")},
                                             {"B", item.at("B")},
                                             {"alpha", item.at("alpha")},
                                             {"beta", item.at("beta")},
                                             {"gamma", item.value("gamma", 0.0)}},
                                        index++);
        f.E = p.E;
        f.A = p.A;
        f.B = p.B;
        f.alpha = p.alpha;
        f.beta = p.beta;
        f.gamma = p.gamma;
        f.Validate();
        out.families.push_back(std::move(f));
      }
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  return out;
}

LawFile ReadLawFile(const std::string& path) {
  auto in = OpenInput(path);
  return ParseLawFile(in);
}

std::string FormatLawFile(const LawFile& file) {
  OrderedJson j;
  j["kind"] = LawKindName(file.kind);
  j["laws"] = OrderedJson::array();
  for (const auto& p : file.laws) {
    j["laws"].push_back({{"target", p.target},
                         {"E", p.E},
                         {"A", p.A},
                         {"B", p.B},
                         {"alpha", p.alpha},
                         {"beta", p.beta},
                         {"gamma", p.gamma}});
  }
  if (!file.families.empty()) {
    j["families"] = OrderedJson::array();
    for (const auto& f : file.families) {
      j["families"].push_back({{"family", f.family},
                               {"members", f.members},
                               {"E", f.E},
                               {"A", f.A},
                               {"B", f.B},
                               {"alpha", f.alpha},
                               {"beta", f.beta},
                               {"gamma", f.gamma}});
    }
  }
  return j.dump(2) + "\n";
}

std::vector<CalibrationRow> ParseCalibrationCsv(std::istream& in) {
  std::vector<CalibrationRow> rows;
  std::string text;
  bool header_seen = false;
  for (int line = 1; std::getline(in, text); ++line) {
    if (Skippable(text)) continue;
    const auto cells = Split(Trim(text), ',');
    if (!header_seen) {
      if (cells != std::vector<std::string>{"task", "language", "loss", "score"}) {
        throw ParseFailure(line, "expected header task,language,loss,score");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 4) throw ParseFailure(line, "expected 4 cells");
    rows.push_back({cells[0], cells[1], ParseDouble(cells[2], line), ParseDouble(cells[3], line)});
  }
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "calibration table has no rows");
  return rows;
}

void ToolConfig::Validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive");
  };
  positive(fit.huber_delta, "fit.huber_delta");
  positive(fit.tolerance, "fit.tolerance");
  positive(fit.outlier_threshold, "fit.outlier_threshold");
  positive(optimizer.tol, "optimizer.tol");
  if (fit.min_subset_tokens < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "filter.min_subset_tokens must be non-negative");
  }
  if (fit.holdout_fraction != 0.0 && !(fit.holdout_fraction > 0.0 && fit.holdout_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fit.holdout_fraction must lie in (0, 1)");
  }
  if (fit.max_iterations < 1 || optimizer.max_iterations < 1) {
    throw Error(ErrorCode::kInvalidArgument, "iteration limits must be positive");
  }
  if (precision < 1 || precision > 17) throw Error(ErrorCode::kInvalidArgument, "precision must lie in [1, 17]");
}

ToolConfig ParseToolConfig(std::istream& in) {
  const Json j = ParseJson(in);
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "config must be a JSON object");
  ToolConfig c;
  try {
    if (j.contains("records")) c.records_path = j.at("records").get<std::string>();
    if (j.contains("transfer")) c.transfer_path = j.at("transfer").get<std::string>();
    if (j.contains("fixture")) c.fixture_path = j.at("fixture").get<std::string>();
    if (j.contains("families")) c.families_path = j.at("families").get<std::string>();
    Assign(j, "precision", c.precision);

    if (j.contains("fit")) {
      const Json& f = j.at("fit");
      Assign(f, "huber_delta", c.fit.huber_delta);
      Assign(f, "exponent_max", c.fit.exponent_max);
      Assign(f, "gamma_min", c.fit.gamma_min);
      Assign(f, "gamma_max", c.fit.gamma_max);
      Assign(f, "max_iterations", c.fit.max_iterations);
      Assign(f, "tolerance", c.fit.tolerance);
      Assign(f, "outlier_threshold", c.fit.outlier_threshold);
      Assign(f, "refit_without_outliers", c.fit.refit_without_outliers);
      Assign(f, "holdout_ids", c.fit.holdout_ids);
      Assign(f, "holdout_fraction", c.fit.holdout_fraction);
      Assign(f, "seed", c.fit.seed);
      if (f.contains("grid")) {
        const Json& g = f.at("grid");
        Assign(g, "E", c.fit.grid_E);
        Assign(g, "log_A", c.fit.grid_log_A);
        Assign(g, "log_B", c.fit.grid_log_B);
        Assign(g, "alpha", c.fit.grid_alpha);
        Assign(g, "beta", c.fit.grid_beta);
        Assign(g, "gamma", c.fit.grid_gamma);
      }
    }
    if (j.contains("filter")) Assign(j.at("filter"), "min_subset_tokens", c.fit.min_subset_tokens);
    if (j.contains("optimizer")) {
      Assign(j.at("optimizer"), "tol", c.optimizer.tol);
      Assign(j.at("optimizer"), "max_iterations", c.optimizer.max_iterations);
    }
    if (j.contains("irds")) {
      const Json& r = j.at("irds");
      IrdsExperimentConfig& x = c.irds;
      if (r.contains("languages")) x.corpus.languages = LanguageSet(r.at("languages").get<std::vector<std::string>>());
      if (r.contains("transfer_structure")) {
        const auto rows = r.at("transfer_structure").get<std::vector<std::vector<double>>>();
        x.corpus.transfer_structure = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t a = 0; a < rows.size(); ++a) {
          if (rows[a].size() != rows[0].size()) throw Error(ErrorCode::kShapeMismatch, "ragged transfer_structure");
          for (std::size_t b = 0; b < rows[a].size(); ++b) x.corpus.transfer_structure(a, b) = rows[a][b];
        }
      }
      Assign(r, "num_classes", x.corpus.num_classes);
      Assign(r, "feature_dim", x.corpus.feature_dim);
      Assign(r, "train_examples", x.corpus.train_examples);
      Assign(r, "validation_examples", x.corpus.validation_examples);
      Assign(r, "hidden", x.train.model.hidden);
      Assign(r, "init_scale", x.train.model.init_scale);
      Assign(r, "eta", x.train.schedule.eta);
      Assign(r, "eta_min", x.train.schedule.eta_min);
      Assign(r, "steps", x.train.schedule.steps);
      Assign(r, "batch_size", x.train.batch_size);
      Assign(r, "language_slots", x.train.language_slots);
      Assign(r, "enumeration_cap", x.enumeration_cap);
      const std::string schedule = r.value("schedule", std::string("constant"));
      if (schedule == "constant") {
        x.train.schedule.kind = ScheduleKind::kConstant;
      } else if (schedule == "cosine") {
        x.train.schedule.kind = ScheduleKind::kCosine;
      } else {
        throw Error(ErrorCode::kInvalidArgument, "unknown schedule '" + schedule + "'");
      }
      const std::string convention = r.value("convention", std::string("fixed_budget"));
      if (convention == "fixed_budget") {
        x.convention = CoalitionConvention::kFixedBudget;
      } else if (convention == "data_scaled") {
        x.convention = CoalitionConvention::kDataScaled;
      } else {
        throw Error(ErrorCode::kInvalidArgument, "unknown coalition convention '" + convention + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("config: ") + e.what());
  }
  c.Validate();
  return c;
}

ToolConfig ReadToolConfig(const std::string& path) {
  auto in = OpenInput(path);
  return ParseToolConfig(in);
}

FamilySpec ReadFamilySpec(const std::string& path) {
  auto in = OpenInput(path);
  const Json j = ParseJson(in);
  FamilySpec out;
  try {
    for (const auto& f : j.at("families")) {
      out.push_back({f.at("id").get<std::string>(), f.at("members").get<std::vector<std::string>>()});
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("families: ") + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::kPartitionError, "no families defined");
  return out;
}

}  // namespace mixlaw
