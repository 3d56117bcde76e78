#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cvbell::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key = value text: numbers, booleans, "strings" and [arrays]; # starts a comment.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "config");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  // Command-line overrides, reported as such in error messages.
  void set(const std::string& key, const std::string& literal);
  void require_known(const std::vector<std::string>& keys) const;

  double number(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<long> integers(const std::string& key, const std::vector<long>& fallback) const;
  std::vector<std::string> texts(const std::string& key, const std::vector<std::string>& fallback) const;

  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

 private:
  struct Entry {
    std::string raw;
    int line = 0;
  };
  const Entry* find(const std::string& key) const;
  std::vector<std::string> items(const std::string& key, const Entry& e) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
};

enum class Command { breed, comb, chsh, sweep, selftest };

std::optional<Command> command_from_name(const std::string& name);
std::string command_name(Command c);

struct ScenarioConfig {
  Command command = Command::breed;
  double grid_xmax = 12.0;
  long grid_points = 1024;
  std::vector<long> p{1, 2, 3, 4, 5};
  std::vector<long> p_prime{1, 2};
  long comb_cat_stages = 5;
  std::string comb_input = "bred";
  std::vector<double> dx1{0.4, 0.8, 1.2};
  double ratio = 1.3;
  long nodes = 5;
  std::vector<double> widths;
  std::vector<std::string> configs{"(6,2)", "(3,0)"};
  double theta = -0.78539816339744828;
  double R = 0.001;
  double eta_apd = 0.06;
  std::vector<double> transmissions{1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7};
  std::vector<std::string> presqueeze{"optimized", "unit", "inverse_envelope"};
  std::string receiver = "calibrated";
  std::string reference = "generated";
  double modulation_width = 0.0;
  long modulation_nodes = 5;
  std::vector<double> modulation_widths{0.0, 0.05, 0.1, 0.2, 0.4};
  long seed = 0;

  std::string canonical() const;
  std::string hash() const;
};

struct GridOverride {
  std::optional<long> points;
  std::optional<double> xmax;
};

// Applies defaults for the command, overrides and every module precondition.
ScenarioConfig resolve(const Config& config, Command command, const GridOverride& grid = {});

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void write_csv(std::ostream& os) const;
  void write_json(std::ostream& os, const std::string& command) const;
};

Table run_breed(const ScenarioConfig& cfg, int threads);
Table run_comb(const ScenarioConfig& cfg, int threads);
Table run_chsh(const ScenarioConfig& cfg, int threads);
Table run_sweep(const ScenarioConfig& cfg, int threads);

struct SelftestOptions {
  long grid_points = 1024;
  double grid_xmax = 12.0;
  bool tamper_fourier_sign = false;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_selftest(const SelftestOptions& options);
void print_checks(std::ostream& os, const std::vector<CheckResult>& checks);

// Runs fn(i) for i < count on up to threads workers; the first exception is rethrown.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

std::string format_number(double v);
std::string fnv1a_hex(std::string_view text);

}  // namespace cvbell::cli
