#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowrec/cli.hpp"
#include "flowrec/csv_io.hpp"
#include "flowrec/benchmarks.hpp"
#include "flowrec/model_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("flowrec_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FLOWREC_CLI_PATH) + " " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

flowrec::cli::CommonOptions common_for(const TempDir& dir) {
  flowrec::cli::CommonOptions c;
  c.out_dir = dir.path.string();
  c.argv = {"flowrec", "test"};
  return c;
}

}  // namespace

TEST_CASE("generate writes a 201-row csv and identical bytes across reruns") {
  TempDir dir("generate");
  const fs::path spec = dir.path / "lv.json";
  write_file(spec, R"({"system": "lotka_volterra", "seed": 5})");
  const fs::path out_a = dir.path / "a.csv";
  const fs::path out_b = dir.path / "b.csv";
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_generate(spec.string(), out_a.string(), common) == 0);
  REQUIRE(flowrec::cli::cmd_generate(spec.string(), out_b.string(), common) == 0);
  const auto rows = flowrec::load_csv(out_a.string());
  CHECK(rows.rows() == 201);
  CHECK(file_bytes(out_a) == file_bytes(out_b));
  CHECK(fs::exists(out_a.string() + ".manifest.json"));
}

TEST_CASE("generate with an invalid spec file fails with a diagnostic") {
  TempDir dir("genbad");
  const fs::path spec = dir.path / "bad.json";
  write_file(spec, "{not json");
  auto common = common_for(dir);
  CHECK_THROWS(flowrec::cli::cmd_generate(spec.string(),
                                          (dir.path / "x.csv").string(),
                                          common));
}

TEST_CASE("recover with epochs=0 reports the initial model") {
  TempDir dir("recover0");
  const fs::path spec = dir.path / "lv.json";
  write_file(spec, R"({"system": "lotka_volterra"})");
  const fs::path data = dir.path / "lv.csv";
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_generate(spec.string(), data.string(), common) == 0);

  const fs::path cfg = dir.path / "cfg.json";
  write_file(cfg, R"({"epochs": 0, "hidden": 4, "window": 20})");
  common.out_dir = (dir.path / "out").string();
  REQUIRE(flowrec::cli::cmd_recover(data.string(), cfg.string(),
                                    "lotka_volterra", common) == 0);
  CHECK(fs::exists(dir.path / "out" / "model.json"));
  CHECK(fs::exists(dir.path / "out" / "metrics.json"));
  CHECK(fs::exists(dir.path / "out" / "params.bin"));
  CHECK(fs::exists(dir.path / "out" / "manifest.json"));
  json metrics;
  std::ifstream(dir.path / "out" / "metrics.json") >> metrics;
  CHECK(metrics.contains("reconstruction_mse"));
  CHECK(metrics["epochs"] == 0);
}

TEST_CASE("recover on a missing dataset exits nonzero through the binary") {
  CHECK(run_cli("recover /nonexistent/data.csv") != 0);
}

TEST_CASE("eval round-trips a stored model") {
  TempDir dir("eval");
  const fs::path spec = dir.path / "lv.json";
  write_file(spec, R"({"system": "lotka_volterra"})");
  const fs::path data = dir.path / "lv.csv";
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_generate(spec.string(), data.string(), common) == 0);
  const fs::path model = dir.path / "model.json";
  flowrec::save_model(flowrec::ground_truth_model(flowrec::SystemId::lotka_volterra),
                      model.string());
  common.out_dir = (dir.path / "out").string();
  REQUIRE(flowrec::cli::cmd_eval(model.string(), data.string(), common) == 0);
  json metrics;
  std::ifstream(dir.path / "out" / "metrics.json") >> metrics;
  CHECK(metrics["reconstruction_mse"].get<double>() <= 1e-6);
}

TEST_CASE("select on the bundled table picks the FPGA platform for energy") {
  TempDir dir("select");
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_select("bundled", 1.0, 1e30, 1e30, 1.0, 3, false,
                                   0, 20, common) == 0);
  json sel;
  std::ifstream(dir.path / "selection.json") >> sel;
  CHECK(sel["platform"] == 0);
  CHECK(sel["feasible"] == true);
  CHECK(sel["candidates"] == 288);
}

TEST_CASE("select reports infeasible with exit 0 on unsatisfiable constraints") {
  TempDir dir("selinf");
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_select("bundled", 0.5, -1e30, 1e30, 1.0, 3, false,
                                   0, 20, common) == 0);
  json sel;
  std::ifstream(dir.path / "selection.json") >> sel;
  CHECK(sel["feasible"] == false);
}

TEST_CASE("select usage errors: gamma outside [0,1] via the binary") {
  CHECK(run_cli("select --gamma 1.5") != 0);
}

TEST_CASE("gradcheck passes its built-in battery") {
  TempDir dir("gradcheck");
  auto common = common_for(dir);
  REQUIRE(flowrec::cli::cmd_gradcheck("", common) == 0);
  json doc;
  std::ifstream(dir.path / "gradcheck.json") >> doc;
  CHECK(doc["pass"] == true);
}

TEST_CASE("rerunning the recorded argv reproduces machine outputs byte-exactly") {
  TempDir dir("manifest");
  const fs::path spec = dir.path / "lv.json";
  write_file(spec, R"({"system": "lotka_volterra", "noise": 0.05, "seed": 3})");
  const fs::path out_a = dir.path / "a" / "data.csv";
  fs::create_directories(out_a.parent_path());
  const std::string args_a = "generate " + spec.string() + " --out-file " +
                             out_a.string();
  REQUIRE(run_cli(args_a) == 0);

  // Re-run from the manifest's argv with a different output path.
  json manifest;
  std::ifstream(out_a.string() + ".manifest.json") >> manifest;
  std::vector<std::string> argv = manifest["argv"];
  const fs::path out_b = dir.path / "b" / "data.csv";
  fs::create_directories(out_b.parent_path());
  std::string args_b;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i] == out_a.string()) argv[i] = out_b.string();
    if (i > 1) args_b += " ";
    args_b += argv[i];
  }
  REQUIRE(run_cli(args_b) == 0);
  CHECK(file_bytes(out_a) == file_bytes(out_b));
}
