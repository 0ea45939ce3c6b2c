#include "doctest.h"
#include "test_util.hpp"

#include "medic/model_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

using namespace medic;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MEDIC_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / "medic_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string data_args(const std::string& name) {
  return "--data " + q(testing::data_dir() / (name + ".csv")) + " --schema " +
         q(testing::data_dir() / (name + ".schema.json"));
}

/// Two well separated clusters along x1, noise on x2.
void write_separable(const fs::path& csv, const fs::path& schema) {
  Rng rng(3);
  std::ofstream out(csv);
  out.precision(17);
  out << "x1,x2,y\n";
  for (int i = 0; i < 80; ++i) {
    const bool pos = i % 2;
    out << (pos ? 5.0 : 0.0) + uniform01(rng) << ',' << standard_normal(rng) << ',' << (pos ? "pos" : "neg") << '\n';
  }
  std::ofstream(schema) << R"({"target": "y", "continuous": ["x1", "x2"], "categorical": [], "classes": ["neg", "pos"]})";
}

const fs::path& small_model() {
  static const fs::path model = [] {
    const fs::path m = workdir() / "cirrhosis_small.json";
    const Run r = run("train " + data_args("cirrhosis") + " --out " + q(m) + " --prototypes 6 --seed 3");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    return m;
  }();
  return model;
}

}  // namespace

TEST_CASE("train on diabetes is deterministic and ends at stage 3") {
  const fs::path a = workdir() / "diab_a.json", b = workdir() / "diab_b.json";
  const Run ra = run("train " + data_args("diabetes") + " --out " + q(a) + " --seed 5");
  REQUIRE_MESSAGE(ra.code == 0, ra.output);
  const Run rb = run("train " + data_args("diabetes") + " --out " + q(b) + " --seed 5");
  REQUIRE(rb.code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(load_model(a).model.stage == 3);
  CHECK(fs::exists(a.string() + ".epochs.csv"));
  CHECK(slurp(a.string() + ".epochs.csv").rfind("epoch,stage,ce,sparsity,diversity,total,val_loss,val_gmean\n", 0) == 0);

  const Run ev = run("eval --model " + q(a) + " --data " + q(testing::data_dir() / "diabetes.csv"));
  REQUIRE(ev.code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(ev.output, m, std::regex(R"(g-mean: (\d\.\d{4})\n)")));
  const double g = std::stod(m[1]);
  CHECK(g >= 0.0);
  CHECK(g <= 1.0);
}

TEST_CASE("missing inputs exit with code 2 and name the path") {
  const Run r = run("train --data " + q(testing::data_dir() / "diabetes.csv") + " --schema nope.json --out " +
                    q(workdir() / "x.json"));
  CHECK(r.code == 2);
  CHECK(r.output.find("nope.json") != std::string::npos);
  CHECK(run("").code != 0);
  CHECK(run("train --data x.csv").code == 2);
  CHECK(run("eval --model " + q(workdir() / "missing.json") + " --data x.csv").code == 2);
}

TEST_CASE("separable toy data evaluates to g-mean 1.0000") {
  const fs::path csv = workdir() / "sep.csv", schema = workdir() / "sep.schema.json", model = workdir() / "sep.json";
  write_separable(csv, schema);
  const Run t = run("train --data " + q(csv) + " --schema " + q(schema) + " --out " + q(model) + " --seed 1");
  REQUIRE_MESSAGE(t.code == 0, t.output);
  const Run ev = run("eval --model " + q(model) + " --data " + q(csv) + " --csv " + q(workdir() / "sep_eval.csv"));
  CHECK(ev.code == 0);
  CHECK(ev.output.find("g-mean: 1.0000") != std::string::npos);
  CHECK(slurp(workdir() / "sep_eval.csv").find("gmean,1.0000") != std::string::npos);
}

TEST_CASE("eval rejects data whose columns do not match the model") {
  const fs::path renamed = workdir() / "renamed.csv";
  std::string text = slurp(testing::data_dir() / "cirrhosis.csv");
  text.replace(text.find("Albumin"), 7, "Albumen");
  std::ofstream(renamed) << text;
  const Run r = run("eval --model " + q(small_model()) + " --data " + q(renamed));
  CHECK(r.code == 2);
  CHECK(r.output.find("schema") != std::string::npos);
}

TEST_CASE("explain lists ranked matches") {
  const std::string data = " --data " + q(testing::data_dir() / "cirrhosis.csv");
  const Run r = run("explain --model " + q(small_model()) + data + " --row 10 --top-k 5");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  std::vector<double> sims;
  const std::regex line(R"((\d+)\. similarity (\d\.\d{3}))");
  for (auto it = std::sregex_iterator(r.output.begin(), r.output.end(), line); it != std::sregex_iterator(); ++it) {
    sims.push_back(std::stod((*it)[2]));
  }
  CHECK(sims.size() == 5);
  for (std::size_t i = 1; i < sims.size(); ++i) CHECK(sims[i - 1] >= sims[i]);

  const Run many = run("explain --model " + q(small_model()) + data + " --row 10 --top-k 50");
  CHECK(std::distance(std::sregex_iterator(many.output.begin(), many.output.end(), line), std::sregex_iterator()) == 6);

  const ModelFile f = load_model(small_model());
  const std::size_t prov_row = f.model.prototypes.provenance[0]->row;
  const Run p = run("explain --model " + q(small_model()) + data + " --row " + std::to_string(prov_row) + " --top-k 6");
  REQUIRE(p.code == 0);
  CHECK(std::regex_search(p.output, std::regex(R"(similarity 1\.000  prototype 0\n)")));

  CHECK(run("explain --model " + q(small_model()) + data + " --row 100000").code == 2);

  const fs::path report = workdir() / "report";
  CHECK(run("explain --model " + q(small_model()) + data + " --row 3 --out " + q(report)).code == 0);
  CHECK(fs::exists(report / "intervals.csv"));
  CHECK(fs::exists(report / "explanations.json"));
}

TEST_CASE("cv on ckd writes five folds") {
  const fs::path dir = workdir() / "cv";
  const fs::path cfg = workdir() / "short.toml";
  std::ofstream(cfg) << "epochs_stage1 = 30\nepochs_stage2 = 10\nepochs_stage3 = 10\n";
  const Run r = run("cv " + data_args("ckd") + " --folds 5 --out " + q(dir) + " --config " + q(cfg));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  std::istringstream folds(slurp(dir / "folds.csv"));
  std::string header;
  std::getline(folds, header);
  CHECK(header == "fold,gmean");
  int n = 0;
  for (std::string l; std::getline(folds, l);) ++n;
  CHECK(n == 5);
  CHECK(slurp(dir / "summary.txt").find("mean g-mean: ") != std::string::npos);
}

TEST_CASE("hpo logs one row per trial") {
  const fs::path csv = workdir() / "hpo.csv", schema = workdir() / "hpo.schema.json";
  write_separable(csv, schema);
  const fs::path cfg = workdir() / "one_epoch.toml";
  std::ofstream(cfg) << "epochs_stage1 = 1\nepochs_stage2 = 1\nepochs_stage3 = 1\n";
  const fs::path dir = workdir() / "hpo";
  const Run r = run("hpo --data " + q(csv) + " --schema " + q(schema) + " --folds 2 --trials 100 --threads 2 --config " +
                    q(cfg) + " --out " + q(dir));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  std::istringstream trials(slurp(dir / "trials.csv"));
  std::string header;
  std::getline(trials, header);
  CHECK(header.rfind("trial,", 0) == 0);
  int n = 0;
  for (std::string l; std::getline(trials, l);) ++n;
  CHECK(n == 100);
  CHECK_NOTHROW(read_config(dir / "best_config.toml"));

  CHECK(run("hpo --data " + q(csv) + " --schema " + q(schema) + " --trials 0").code == 2);
}
