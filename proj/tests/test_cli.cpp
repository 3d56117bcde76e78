#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cvbell/cli.hpp"
#include "cvbell/errors.hpp"

using namespace cvbell::cli;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text, Command c = Command::breed) {
  try {
    resolve(Config::parse(text, "case.toml"), c);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string csv(const Table& t) {
  std::ostringstream os;
  t.write_csv(os);
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

int run_exe(const std::string& args) {
  const char* exe = std::getenv("CVBELL_EXE");
  REQUIRE(exe != nullptr);
  const int status = std::system((std::string(exe) + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config values") {
  const auto c = Config::parse(R"cfg(# scenario
grid_points = 2048
ratio = 1.25   # trailing comment
comb_input = "analytic"
dx1 = [0.1, 0.2, 3e-1]
configs = ["(6,2)", "(3,0)"]
flag = true
)cfg");
  CHECK(c.integer("grid_points", 0) == 2048);
  CHECK(c.number("ratio", 0) == 1.25);
  CHECK(c.text("comb_input", "") == "analytic");
  CHECK(c.numbers("dx1", {}) == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(c.texts("configs", {}) == std::vector<std::string>{"(6,2)", "(3,0)"});
  CHECK(c.flag("flag", false));
  CHECK(c.number("missing", 7.0) == 7.0);
}

TEST_CASE("config errors name the key and line") {
  CHECK(error_of("ratio = 1.3\n9bad key = 2\n").find("case.toml:2") != std::string::npos);
  CHECK(error_of("ratio = 1.3\n9bad key = 2\n").find("9bad key") != std::string::npos);
  CHECK(error_of("ratio = abc\n").find("'ratio'") != std::string::npos);
  CHECK(error_of("nodes = 2.5\n").find("'nodes'") != std::string::npos);
  CHECK(error_of("dx1 = []\n").find("dx1") != std::string::npos);
  CHECK(error_of("\n\nratioo = 1.3\n").find("case.toml:3") != std::string::npos);
  CHECK(error_of("ratio = 1\nratio = 2\n").find("duplicate") != std::string::npos);
  CHECK(error_of("p = [0, 2]\n").find("'p'") != std::string::npos);
  CHECK(error_of("dx1 = [0.4,\n").find("'dx1'") != std::string::npos);
  CHECK(error_of("transmissions = [1.0, 1.2]\n", Command::chsh).find("transmissions") != std::string::npos);
  CHECK(error_of("configs = [\"(4,2)\"]\n", Command::chsh).find("configs") != std::string::npos);
  CHECK(error_of("presqueeze = [\"maximal\"]\n", Command::chsh).find("presqueeze") != std::string::npos);
  CHECK(error_of("grid_points = 1000\n").find("grid_points") != std::string::npos);
  CHECK(error_of("ratio = 1.3\n").empty());
}

TEST_CASE("resolved defaults, overrides and hashing") {
  const Config empty;
  const auto breed = resolve(empty, Command::breed);
  CHECK(breed.grid_points == 1024);
  const auto chsh = resolve(empty, Command::chsh);
  CHECK(chsh.grid_points == 4096);
  CHECK(chsh.grid_xmax == 32.0);
  const auto over = resolve(empty, Command::breed, GridOverride{2048, 14.0});
  CHECK(over.grid_points == 2048);
  CHECK(over.grid_xmax == 14.0);
  CHECK(breed.hash() == resolve(Config::parse("ratio = 1.3"), Command::breed).hash());
  CHECK(breed.hash() != over.hash());
  CHECK(breed.hash().size() == 16);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("tables") {
  Table t{{"a", "b", "config_hash"}, {{"1", "x", "00ff"}, {"2.5", "y", "00ff"}}};
  CHECK(csv(t) == "a,b,config_hash\n1,x,00ff\n2.5,y,00ff\n");
  std::ostringstream os;
  t.write_json(os, "breed");
  const auto doc = nlohmann::json::parse(os.str());
  CHECK(doc["command"] == "breed");
  CHECK(doc["rows"][1]["a"] == 2.5);
  CHECK(doc["rows"][1]["config_hash"] == "00ff");
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(50, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 50);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw std::runtime_error("x"); }),
                  std::runtime_error);
}

TEST_CASE("breed output is identical across thread counts") {
  const auto cfg = resolve(Config::parse("p = [2, 1]\ndx1 = [0.8, 0.4]\n"), Command::breed);
  const Table one = run_breed(cfg, 1), three = run_breed(cfg, 3);
  CHECK(csv(one) == csv(three));
  REQUIRE(one.rows.size() == 4);
  CHECK(one.rows[0][0] == "1");
  CHECK(one.rows[0][1] == "0.4");
  for (const auto& row : one.rows) CHECK(row.back() == cfg.hash());
}

TEST_CASE("selftest") {
  const auto good = run_selftest({});
  for (const auto& c : good) CHECK_MESSAGE(c.passed, c.name << ": " << c.detail);
  SelftestOptions tamper;
  tamper.tamper_fourier_sign = true;
  for (const auto& c : run_selftest(tamper))
    if (c.name == "eps_p_parity") CHECK_FALSE(c.passed);
  SelftestOptions coarse;
  coarse.grid_points = 64;
  const auto degraded = run_selftest(coarse);
  const auto conv = std::find_if(degraded.begin(), degraded.end(), [](const auto& c) { return c.name == "grid_convergence"; });
  REQUIRE(conv != degraded.end());
  CHECK_FALSE(conv->passed);
  CHECK(conv->detail.find("degraded") != std::string::npos);
}

TEST_CASE("command-line tool") {
  const fs::path dir = fs::temp_directory_path() / "cvbell_cli_test";
  fs::create_directories(dir);
  std::ofstream(dir / "bad.toml") << "p = [1]\ndx1 = []\n";
  std::ofstream(dir / "typo.toml") << "p = [1]\nd x1 = [0.4]\n";
  std::ofstream(dir / "ok.toml") << "p = [1, 2]\ndx1 = [0.5]\n";
  CHECK(run_exe("breed --config " + (dir / "bad.toml").string()) == 2);
  CHECK(run_exe("breed --config " + (dir / "typo.toml").string()) == 2);
  CHECK(run_exe("breed --threads 0") == 2);
  CHECK(run_exe("selftest") == 0);
  CHECK(run_exe("selftest --tamper-fourier-sign") == 3);
  CHECK(run_exe("selftest --grid-points 64") == 3);
  const std::string ok = (dir / "ok.toml").string();
  REQUIRE(run_exe("breed --config " + ok + " --out " + (dir / "a.csv").string() + " --json") == 0);
  REQUIRE(run_exe("breed --threads 2 --config " + ok + " --out " + (dir / "b.csv").string()) == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv").rfind("p,dx1,fidelity,p_succ,alpha,s_prime", 0) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "a.json"))["rows"].size() == 2);
  fs::remove_all(dir);
}
