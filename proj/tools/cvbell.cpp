#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <CLI11.hpp>

#include "cvbell/cli.hpp"
#include "cvbell/errors.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  bool json = false;
  int threads = 1;
  std::optional<long> grid_points;
  std::optional<double> grid_xmax;
  bool tamper = false;
};

int run(cvbell::cli::Command command, const Options& o) {
  using namespace cvbell::cli;
  const GridOverride grid{o.grid_points, o.grid_xmax};
  if (command == Command::selftest) {
    SelftestOptions st;
    if (o.grid_points) st.grid_points = *o.grid_points;
    if (o.grid_xmax) st.grid_xmax = *o.grid_xmax;
    st.tamper_fourier_sign = o.tamper;
    const auto checks = run_selftest(st);
    print_checks(std::cout, checks);
    for (const auto& c : checks)
      if (!c.passed) return 3;
    return 0;
  }
  const Config raw = o.config.empty() ? Config{} : Config::load(o.config);
  const ScenarioConfig cfg = resolve(raw, command, grid);
  Table table;
  switch (command) {
    case Command::breed: table = run_breed(cfg, o.threads); break;
    case Command::comb: table = run_comb(cfg, o.threads); break;
    case Command::chsh: table = run_chsh(cfg, o.threads); break;
    case Command::sweep: table = run_sweep(cfg, o.threads); break;
    case Command::selftest: break;
  }
  if (o.out.empty() || o.out == "-") {
    if (o.json)
      table.write_json(std::cout, command_name(command));
    else
      table.write_csv(std::cout);
    return 0;
  }
  auto open = [](const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path.string());
    return f;
  };
  auto csv = open(o.out);
  table.write_csv(csv);
  if (o.json) {
    auto js = open(std::filesystem::path(o.out).replace_extension(".json"));
    table.write_json(js, command_name(command));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cat breeding, GKP combs and CV Bell tests on a quadrature grid"};
  app.require_subcommand(1);
  Options o;
  std::optional<cvbell::cli::Command> chosen;
  const std::pair<const char*, const char*> commands[] = {
      {"breed", "bred cat fidelity and success probability per stage count and herald width"},
      {"comb", "GKP comb breeding from a bred cat"},
      {"chsh", "CHSH value against line transmission per pre-squeeze policy"},
      {"sweep", "CHSH value and success probability against modulation herald width"},
      {"selftest", "numerical self-checks"}};
  for (const auto& [name, about] : commands) {
    auto* sub = app.add_subcommand(name, about);
    if (std::string(name) != "selftest") {
      sub->add_option("--config", o.config, "key = value scenario file")->check(CLI::ExistingFile);
      sub->add_option("--out", o.out, "CSV output path (default stdout)");
      sub->add_flag("--json", o.json, "also write the table as JSON (next to --out, else to stdout)");
      sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    } else {
      sub->add_flag("--tamper-fourier-sign", o.tamper)->group("");
    }
    sub->add_option("--grid-points", o.grid_points, "grid size (power of two)");
    sub->add_option("--grid-xmax", o.grid_xmax, "grid half-width");
    sub->callback([&, name] { chosen = cvbell::cli::command_from_name(name); });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run(*chosen, o);
  } catch (const cvbell::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cvbell::PreconditionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const cvbell::NumericalGuardError& e) {
    std::cerr << "numerical guard: " << e.what() << '\n';
    return 3;
  }
}
