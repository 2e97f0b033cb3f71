#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mixlaw/io.hpp"

#ifndef MIXLAW_CLI_PATH
#error "MIXLAW_CLI_PATH must name the command-line binary"
#endif

namespace scenario {

namespace fs = std::filesystem;
using namespace mixlaw;

struct Outcome {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void Spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Input files for every subcommand, written once into a scratch directory.
class Workspace {
 public:
  Workspace() {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("mixlaw_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
    const TransferMatrix transfer = fixtures::FourLanguageTransfer();
    const LanguageSet& langs = transfer.languages();

    std::ostringstream records;
    WriteRunRecords(records, fixtures::ShapleyLawRecords(fixtures::TrueEnglishLaw(), transfer, 0.01, 3));
    Spit(path("records.jsonl"), records.str());
    Spit(path("transfer.csv"), FormatMatrixCsv(langs, langs, transfer.values()));

    Spit(path("fixture.txt"),
         "languages en,de,fr\n"
         "weight en en 1.2\nweight de en 0.4\nweight fr en 0.3\n"
         "weight en de 0.5\nweight de de 1.0\nweight fr de 0.2\n"
         "weight en fr 0.3\nweight de fr 0.1\nweight fr fr 0.9\n");

    LawFile laws;
    laws.laws = {{"en", 1.2, 400, 900, 0.31, 0.29, 0.6},
                 {"de", 1.4, 350, 800, 0.3, 0.28, 0.5},
                 {"fr", 1.3, 380, 850, 0.3, 0.3, 0.55},
                 {"zh", 1.6, 420, 950, 0.32, 0.3, 0.7}};
    Spit(path("laws.json"), FormatLawFile(laws));

    Spit(path("tokens.json"), R"({"en": 4e11, "de": 1.2e11, "fr": 9e10, "zh": 2e11})");
    Spit(path("budget.json"), R"({"en": 2e9})");
    Spit(path("tight_budget.json"), R"({"en": 1e9, "de": 1e9, "fr": 1e9, "zh": 1e9})");

    std::ostringstream calib;
    calib << "task,language,loss,score\n";
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(2.0, 3.5);
    for (int i = 0; i < 30; ++i) {
      const double l = u(rng);
      calib << "hs," << (i % 2 ? "en" : "de") << ',' << FormatNumber(l) << ','
            << FormatNumber(2.0 * std::exp(-l) + 0.2 + 0.001 * (i % 3)) << '\n';
    }
    Spit(path("calib.csv"), calib.str());

    Spit(path("sv_a.csv"), "source/target,a,b\na,0.5,0.1\nb,0.2,0.7\n");
    Spit(path("sv_b.csv"), "source/target,a,b\na,0.45,0.12\nb,0.25,0.6\n");
    Spit(path("irds.json"),
         R"({"irds": {"languages": ["l0", "l1", "l2"],
                      "transfer_structure": [[1, 0.6, 0.1], [0.6, 1, 0.1], [0.1, 0.1, 1]],
                      "train_examples": 300, "validation_examples": 100, "hidden": 8, "steps": 30}})");
  }

  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Outcome Run(const std::string& args) const {
    const std::string out = path("stdout.txt");
    const std::string err = path("stderr.txt");
    const std::string cmd = std::string("\"") + MIXLAW_CLI_PATH + "\" " + args + " > \"" + out + "\" 2> \"" + err + "\"";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = Slurp(out);
    o.err = Slurp(err);
    return o;
  }

  // One machine-format invocation per subcommand and mode.
  std::vector<std::string> MachineCommands() const {
    const std::string m = "--format machine ";
    return {
        m + "ingest --records " + path("records.jsonl"),
        m + "shapley --mode exact --fixture " + path("fixture.txt"),
        m + "shapley --mode montecarlo --samples 400 --seed 9 --fixture " + path("fixture.txt"),
        m + "--config " + path("irds.json") + " shapley --mode irds --seed 2",
        m + "fit --law shapleylaw --target en --records " + path("records.jsonl") + " --transfer " + path("transfer.csv"),
        m + "fit --law chinchilla --target en --records " + path("records.jsonl"),
        m + "predict --laws " + path("laws.json") + " --transfer " + path("transfer.csv") + " --records " +
            path("records.jsonl"),
        m + "optimize --laws " + path("laws.json") + " --transfer " + path("transfer.csv") + " --N 1e8 --D 1e10",
        m + "optimize --laws " + path("laws.json") + " --transfer " + path("transfer.csv") +
            " --N 1e8 --D 1e10 --budget " + path("budget.json"),
        m + "optimize --baseline smoothed --alpha 0.5 --tokens " + path("tokens.json"),
        m + "calibrate --input " + path("calib.csv"),
        m + "--config " + path("irds.json") + " irds-run --seed 4",
        m + "compare-sv " + path("sv_a.csv") + " " + path("sv_b.csv"),
    };
  }

 private:
  fs::path dir_;
};

}  // namespace scenario
