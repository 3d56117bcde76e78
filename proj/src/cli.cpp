#include "cvbell/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "cvbell/bell.hpp"
#include "cvbell/breeding.hpp"

namespace cvbell::cli {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  return std::all_of(k.begin(), k.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

// Drops a trailing # comment outside string literals.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool balanced_literal(const std::string& v) {
  if (v.empty()) return false;
  if (v.front() == '"') return v.size() >= 2 && v.back() == '"' && std::count(v.begin(), v.end(), '"') == 2;
  if (v.front() == '[') return v.back() == ']';
  return v.find_first_of("[]\"=") == std::string::npos;
}

std::optional<double> to_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_same_v<T, std::string>)
      os << '"' << v[i] << '"';
    else if constexpr (std::is_same_v<T, double>)
      os << format_number(v[i]);
    else
      os << v[i];
  }
  os << ']';
  return os.str();
}

const std::vector<std::string> kKeys = {
    "grid_xmax",   "grid_points", "p",           "p_prime",    "comb_cat_stages",  "comb_input",
    "dx1",         "ratio",       "nodes",       "widths",     "configs",          "theta",
    "R",           "eta_apd",     "transmissions", "presqueeze", "receiver",       "reference",
    "modulation_width", "modulation_nodes", "modulation_widths", "seed"};

BellConfiguration bell_config(const std::string& label, const ScenarioConfig& cfg) {
  BellConfiguration b;
  if (label == "(3,0)") {
    b = BellConfiguration::weak();
  } else if (label == "(6,2)") {
    b = BellConfiguration::strong();
  } else {
    int p = 0, pp = 0;
    char tail = 0;
    if (std::sscanf(label.c_str(), "(%d,%d)%c", &p, &pp, &tail) != 2)
      throw PreconditionError("unknown Bell configuration label " + label);
    b.p = p;
    b.p_prime = pp;
    b.label = label;
  }
  b.subtraction.theta = cfg.theta;
  b.subtraction.R = cfg.R;
  b.subtraction.eta_apd = cfg.eta_apd;
  b.modulation_width = cfg.modulation_width;
  b.modulation_nodes = static_cast<int>(cfg.modulation_nodes);
  b.reference = cfg.reference == "analytic" ? BinningReference::analytic : BinningReference::generated;
  return b;
}

PresqueezePolicy policy_of(const std::string& name) {
  if (name == "unit") return PresqueezePolicy::unit;
  if (name == "inverse_envelope") return PresqueezePolicy::inverse_envelope;
  return PresqueezePolicy::optimized;
}

Schedule schedule_for(const ScenarioConfig& cfg, double dx1) {
  if (!cfg.widths.empty()) return Schedule::explicit_widths(cfg.widths, static_cast<int>(cfg.nodes));
  return Schedule::geometric(dx1, cfg.ratio, static_cast<int>(cfg.nodes));
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  c.source_ = source;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string key = trim(body.substr(0, eq == std::string::npos ? body.size() : eq));
    auto where = [&] { return source + ":" + std::to_string(number) + ": "; };
    if (eq == std::string::npos) {
      if (valid_key(key)) throw ConfigError(where() + "key '" + key + "' has no '=' and value");
      throw ConfigError(where() + "malformed line '" + body + "'");
    }
    if (!valid_key(key)) throw ConfigError(where() + "malformed key '" + key + "'");
    const std::string value = trim(body.substr(eq + 1));
    if (!balanced_literal(value)) throw ConfigError(where() + "malformed value for key '" + key + "'");
    if (c.entries_.count(key)) throw ConfigError(where() + "duplicate key '" + key + "'");
    c.entries_[key] = {value, number};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& literal) { entries_[key] = {literal, 0}; }

void Config::require_known(const std::vector<std::string>& keys) const {
  for (const auto& [k, e] : entries_)
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(k, "unknown key '" + k + "'");
}

void Config::fail(const std::string& key, const std::string& message) const {
  const Entry* e = find(key);
  std::string where = e && e->line > 0 ? source_ + ":" + std::to_string(e->line) : (e ? "command line" : "defaults");
  throw ConfigError(where + ": " + message + (message.find('\'' + key + '\'') == std::string::npos ? " (key '" + key + "')" : ""));
}

const Config::Entry* Config::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> Config::items(const std::string& key, const Entry& e) const {
  const std::string& v = e.raw;
  if (v.front() != '[') return {v};
  std::vector<std::string> out;
  const std::string inside = trim(std::string_view(v).substr(1, v.size() - 2));
  if (inside.empty()) return out;
  std::string cur;
  bool quoted = false;
  for (char ch : inside) {
    if (ch == '"') quoted = !quoted;
    if (ch == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  for (const auto& item : out)
    if (item.empty()) fail(key, "empty array element for key '" + key + "'");
  return out;
}

double Config::number(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  const auto v = to_number(e->raw);
  if (!v) fail(key, "key '" + key + "' expects a number, got " + e->raw);
  return *v;
}

long Config::integer(const std::string& key, long fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  const auto v = to_number(e->raw);
  if (!v || std::floor(*v) != *v) fail(key, "key '" + key + "' expects an integer, got " + e->raw);
  return static_cast<long>(*v);
}

bool Config::flag(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->raw == "true") return true;
  if (e->raw == "false") return false;
  fail(key, "key '" + key + "' expects true or false, got " + e->raw);
}

std::string Config::text(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->raw.front() != '"') fail(key, "key '" + key + "' expects a quoted string, got " + e->raw);
  return unquote(e->raw);
}

std::vector<double> Config::numbers(const std::string& key, const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : items(key, *e)) {
    const auto v = to_number(item);
    if (!v) fail(key, "key '" + key + "' expects numbers, got " + item);
    out.push_back(*v);
  }
  return out;
}

std::vector<long> Config::integers(const std::string& key, const std::vector<long>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<long> out;
  for (const auto& item : items(key, *e)) {
    const auto v = to_number(item);
    if (!v || std::floor(*v) != *v) fail(key, "key '" + key + "' expects integers, got " + item);
    out.push_back(static_cast<long>(*v));
  }
  return out;
}

std::vector<std::string> Config::texts(const std::string& key, const std::vector<std::string>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<std::string> out;
  for (const auto& item : items(key, *e)) {
    if (item.front() != '"') fail(key, "key '" + key + "' expects quoted strings, got " + item);
    out.push_back(unquote(item));
  }
  return out;
}

std::optional<Command> command_from_name(const std::string& name) {
  if (name == "breed") return Command::breed;
  if (name == "comb") return Command::comb;
  if (name == "chsh") return Command::chsh;
  if (name == "sweep") return Command::sweep;
  if (name == "selftest") return Command::selftest;
  return std::nullopt;
}

std::string command_name(Command c) {
  switch (c) {
    case Command::breed: return "breed";
    case Command::comb: return "comb";
    case Command::chsh: return "chsh";
    case Command::sweep: return "sweep";
    case Command::selftest: return "selftest";
  }
  return "?";
}

std::string ScenarioConfig::canonical() const {
  std::ostringstream os;
  os << "command = \"" << command_name(command) << "\"\n"
     << "grid_xmax = " << format_number(grid_xmax) << "\n"
     << "grid_points = " << grid_points << "\n";
  switch (command) {
    case Command::breed:
      os << "p = " << join(p) << "\n";
      break;
    case Command::comb:
      os << "p_prime = " << join(p_prime) << "\ncomb_cat_stages = " << comb_cat_stages << "\ncomb_input = \""
         << comb_input << "\"\n";
      break;
    default:
      break;
  }
  if (command == Command::breed || command == Command::comb)
    os << "dx1 = " << join(dx1) << "\nratio = " << format_number(ratio) << "\nnodes = " << nodes
       << "\nwidths = " << join(widths) << "\n";
  if (command == Command::chsh || command == Command::sweep) {
    os << "configs = " << join(configs) << "\ntheta = " << format_number(theta) << "\nR = " << format_number(R)
       << "\neta_apd = " << format_number(eta_apd) << "\nreference = \"" << reference << "\"\nmodulation_nodes = "
       << modulation_nodes << "\n";
    if (command == Command::chsh)
      os << "transmissions = " << join(transmissions) << "\npresqueeze = " << join(presqueeze) << "\nreceiver = \""
         << receiver << "\"\nmodulation_width = " << format_number(modulation_width) << "\n";
    else
      os << "modulation_widths = " << join(modulation_widths) << "\n";
  }
  os << "seed = " << seed << "\n";
  return os.str();
}

std::string ScenarioConfig::hash() const { return fnv1a_hex(canonical()); }

ScenarioConfig resolve(const Config& config, Command command, const GridOverride& grid) {
  config.require_known(kKeys);
  ScenarioConfig s;
  s.command = command;
  const bool bell = command == Command::chsh || command == Command::sweep;
  s.grid_xmax = config.number("grid_xmax", bell ? 32.0 : 12.0);
  s.grid_points = config.integer("grid_points", bell ? 4096 : 1024);
  if (grid.xmax) s.grid_xmax = *grid.xmax;
  if (grid.points) s.grid_points = *grid.points;
  if (!(s.grid_xmax > 0)) config.fail("grid_xmax", "grid_xmax must be positive");
  if (s.grid_points < 64 || (s.grid_points & (s.grid_points - 1)) != 0)
    config.fail("grid_points", "grid_points must be a power of two >= 64");

  s.p = config.integers("p", s.p);
  s.p_prime = config.integers("p_prime", s.p_prime);
  s.comb_cat_stages = config.integer("comb_cat_stages", s.comb_cat_stages);
  s.comb_input = config.text("comb_input", s.comb_input);
  s.dx1 = config.numbers("dx1", s.dx1);
  s.ratio = config.number("ratio", s.ratio);
  s.nodes = config.integer("nodes", s.nodes);
  s.widths = config.numbers("widths", s.widths);
  s.configs = config.texts("configs", s.configs);
  s.theta = config.number("theta", s.theta);
  s.R = config.number("R", s.R);
  s.eta_apd = config.number("eta_apd", s.eta_apd);
  s.transmissions = config.numbers("transmissions", s.transmissions);
  s.presqueeze = config.texts("presqueeze", s.presqueeze);
  s.receiver = config.text("receiver", s.receiver);
  s.reference = config.text("reference", s.reference);
  s.modulation_width = config.number("modulation_width", s.modulation_width);
  s.modulation_nodes = config.integer("modulation_nodes", s.modulation_nodes);
  s.modulation_widths = config.numbers("modulation_widths", s.modulation_widths);
  s.seed = config.integer("seed", s.seed);

  if (command == Command::breed) {
    if (s.p.empty()) config.fail("p", "p list is empty");
    for (long v : s.p)
      if (v < 1 || v > 6) config.fail("p", "p values must lie in 1..6");
  }
  if (command == Command::comb) {
    if (s.p_prime.empty()) config.fail("p_prime", "p_prime list is empty");
    for (long v : s.p_prime)
      if (v < 1 || v > 4) config.fail("p_prime", "p_prime values must lie in 1..4");
    if (s.comb_cat_stages < 1 || s.comb_cat_stages > 6) config.fail("comb_cat_stages", "comb_cat_stages must lie in 1..6");
    if (s.comb_input != "bred" && s.comb_input != "analytic")
      config.fail("comb_input", "comb_input must be \"bred\" or \"analytic\"");
  }
  if (command == Command::breed || command == Command::comb) {
    if (s.dx1.empty()) config.fail("dx1", "dx1 list is empty");
    for (double w : s.dx1)
      if (!(w >= 0)) config.fail("dx1", "dx1 values must be non-negative");
    if (!(s.ratio > 0)) config.fail("ratio", "ratio must be positive");
    if (s.nodes < 1) config.fail("nodes", "nodes must be at least 1");
    for (double w : s.widths)
      if (!(w > 0)) config.fail("widths", "explicit widths must be positive");
  }
  if (bell) {
    if (s.configs.empty()) config.fail("configs", "configs list is empty");
    for (const auto& label : s.configs) {
      try {
        bell_config(label, s).validate();
      } catch (const PreconditionError& e) {
        config.fail("configs", std::string("invalid configuration ") + label + ": " + e.what());
      }
    }
    if (!(s.R > 0 && s.R <= 1)) config.fail("R", "R must lie in (0, 1]");
    if (!(s.eta_apd > 0 && s.eta_apd <= 1)) config.fail("eta_apd", "eta_apd must lie in (0, 1]");
    if (s.reference != "generated" && s.reference != "analytic")
      config.fail("reference", "reference must be \"generated\" or \"analytic\"");
    if (s.modulation_nodes < 1) config.fail("modulation_nodes", "modulation_nodes must be at least 1");
  }
  if (command == Command::chsh) {
    if (s.transmissions.empty()) config.fail("transmissions", "transmissions list is empty");
    for (double T : s.transmissions)
      if (!(T > 0 && T <= 1)) config.fail("transmissions", "transmissions must lie in (0, 1]");
    if (s.presqueeze.empty()) config.fail("presqueeze", "presqueeze list is empty");
    for (const auto& name : s.presqueeze)
      if (name != "optimized" && name != "unit" && name != "inverse_envelope")
        config.fail("presqueeze", "presqueeze entries must be optimized, unit or inverse_envelope");
    if (s.receiver != "calibrated" && s.receiver != "physical")
      config.fail("receiver", "receiver must be \"calibrated\" or \"physical\"");
    if (!(s.modulation_width >= 0)) config.fail("modulation_width", "modulation_width must be non-negative");
  }
  if (command == Command::sweep) {
    if (s.modulation_widths.empty()) config.fail("modulation_widths", "modulation_widths list is empty");
    for (double w : s.modulation_widths)
      if (!(w >= 0)) config.fail("modulation_widths", "modulation_widths must be non-negative");
  }
  return s;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Table::write_csv(std::ostream& os) const {
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

void Table::write_json(std::ostream& os, const std::string& command) const {
  nlohmann::ordered_json doc;
  doc["command"] = command;
  doc["columns"] = columns;
  auto& rows_json = doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json obj;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto v = to_number(row[i]);
      if (v && columns[i] != "config_hash")
        obj[columns[i]] = *v;
      else
        obj[columns[i]] = row[i];
    }
    rows_json.push_back(std::move(obj));
  }
  os << doc.dump(2) << '\n';
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Table run_breed(const ScenarioConfig& cfg, int threads) {
  const Grid grid(cfg.grid_xmax, cfg.grid_points);
  std::vector<std::pair<long, double>> keys;
  for (long p : cfg.p)
    for (double w : cfg.dx1) keys.emplace_back(p, w);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  Table t;
  t.columns = {"p", "dx1", "fidelity", "p_succ", "alpha", "s_prime", "expected_resources", "config_hash"};
  t.rows.resize(keys.size());
  const std::string hash = cfg.hash();
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    const auto [p, w] = keys[i];
    const auto r = breed_cat(BreedingPlan::cat(static_cast<int>(p), schedule_for(cfg, w), grid.dx()), grid);
    const auto fit = fit_nearest_scs(r.state, std::pow(2.0, p));
    t.rows[i] = {std::to_string(p), format_number(w), format_number(fit.fidelity), format_number(r.ledger.p_succ()),
                 format_number(fit.cat->alpha), format_number(fit.cat->s_prime),
                 format_number(r.ledger.expected_resources()), hash};
  });
  return t;
}

Table run_comb(const ScenarioConfig& cfg, int threads) {
  const Grid grid(cfg.grid_xmax, cfg.grid_points);
  const double s_prime = 1 / std::numbers::sqrt2;
  const int stages = static_cast<int>(cfg.comb_cat_stages);
  const double alpha = std::sqrt(std::pow(2.0, stages));
  Kernel input = cfg.comb_input == "analytic"
                     ? Kernel(squeezed_cat(CatParams{Parity::even, alpha, s_prime, CatFrame::rotated}, grid))
                     : breed_cat(BreedingPlan::cat(stages, Schedule::tight(), grid.dx()), grid)
                           .state.transformed([](const Wave& w) { return rotate_quarter(w); });
  const double a0 = comb_seed_spacing(alpha, s_prime);
  std::vector<std::pair<long, double>> keys;
  for (long pp : cfg.p_prime)
    for (double w : cfg.dx1) keys.emplace_back(pp, w);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  Table t;
  t.columns = {"p_prime", "dx1", "fidelity", "p_succ", "a", "s", "s_prime", "condition_holds", "config_hash"};
  t.rows.resize(keys.size());
  const std::string hash = cfg.hash();
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    const auto [pp, w] = keys[i];
    const auto plan = BreedingPlan::comb(static_cast<int>(pp), a0, schedule_for(cfg, w), grid.dx());
    const auto r = breed_comb(plan, BreedResult{input, ResourceLedger::single_photon()}, grid);
    const auto fit = fit_nearest_comb(r.state, CombParams{LogicalBit::zero, plan.final_spacing(), a0 / std::numbers::pi, s_prime});
    t.rows[i] = {std::to_string(pp), format_number(w), format_number(fit.fidelity), format_number(r.ledger.p_succ()),
                 format_number(fit.comb->a), format_number(fit.comb->s), format_number(fit.comb->s_prime),
                 fit.condition_holds ? "true" : "false", hash};
  });
  return t;
}

Table run_chsh(const ScenarioConfig& cfg, int threads) {
  const Grid grid(cfg.grid_xmax, cfg.grid_points);
  const auto model = cfg.receiver == "physical" ? ReceiverModel::physical : ReceiverModel::calibrated;
  const std::size_t nc = cfg.configs.size();
  std::vector<std::optional<BellResource>> resources(nc);
  std::vector<double> envelopes(nc);
  parallel_for(nc, threads, [&](std::size_t c) {
    const auto bc = bell_config(cfg.configs[c], cfg);
    const auto sources = prepare_sources(bc, grid);
    envelopes[c] = sources.s_prime;
    resources[c] = assemble(sources, bc);
  });
  std::vector<CorrelatorEngine> engines;
  for (const auto& r : resources) engines.emplace_back(r->state, r->measurement);

  std::vector<std::string> policies = cfg.presqueeze;
  std::sort(policies.begin(), policies.end());
  policies.erase(std::unique(policies.begin(), policies.end()), policies.end());
  std::vector<double> ts = cfg.transmissions;
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<std::tuple<std::size_t, std::size_t>> curves;
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t k = 0; k < policies.size(); ++k) curves.emplace_back(c, k);
  std::vector<std::optional<double>> crossings(curves.size());
  std::vector<CHSHResult> points(curves.size() * ts.size());
  parallel_for(curves.size() * (ts.size() + 1), threads, [&](std::size_t job) {
    const std::size_t curve = job / (ts.size() + 1), slot = job % (ts.size() + 1);
    const auto [c, k] = curves[curve];
    const auto policy = policy_of(policies[k]);
    if (slot == ts.size())
      crossings[curve] = crossing_transmission(engines[c], cfg.theta, policy, envelopes[c], model);
    else
      points[curve * ts.size() + slot] = loss_point(engines[c], cfg.theta, ts[slot], policy, envelopes[c], model);
  });

  Table t;
  t.columns = {"config_label", "T",    "theta",      "S",          "E_xx",     "E_xp",     "E_px",
               "E_pp",         "P_succ", "crossing_T", "presqueeze_policy", "presqueeze", "receiver", "config_hash"};
  const std::string hash = cfg.hash();
  std::vector<std::size_t> order(curves.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return std::make_pair(cfg.configs[std::get<0>(curves[l])], policies[std::get<1>(curves[l])]) <
           std::make_pair(cfg.configs[std::get<0>(curves[r])], policies[std::get<1>(curves[r])]);
  });
  for (std::size_t curve : order) {
    const auto [c, k] = curves[curve];
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& q = points[curve * ts.size() + i];
      t.rows.push_back({cfg.configs[c], format_number(ts[i]), format_number(q.theta), format_number(q.S),
                        format_number(q.E_xx), format_number(q.E_xp), format_number(q.E_px), format_number(q.E_pp),
                        format_number(resources[c]->ledger.p_succ()),
                        crossings[curve] ? format_number(*crossings[curve]) : "none", policies[k],
                        format_number(q.presqueeze), cfg.receiver, hash});
    }
  }
  return t;
}

Table run_sweep(const ScenarioConfig& cfg, int threads) {
  const Grid grid(cfg.grid_xmax, cfg.grid_points);
  std::vector<double> widths = cfg.modulation_widths;
  std::sort(widths.begin(), widths.end());
  widths.erase(std::unique(widths.begin(), widths.end()), widths.end());
  std::vector<std::size_t> order(cfg.configs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return cfg.configs[l] < cfg.configs[r]; });
  std::vector<std::vector<PipelinePoint>> results(cfg.configs.size());
  parallel_for(cfg.configs.size(), threads, [&](std::size_t c) {
    const auto bc = bell_config(cfg.configs[c], cfg);
    results[c] = pipeline_success(prepare_sources(bc, grid), bc, widths);
  });
  Table t;
  t.columns = {"config_label", "modulation_width", "S", "P_succ", "modulation_probability", "config_hash"};
  const std::string hash = cfg.hash();
  for (std::size_t c : order)
    for (const auto& pt : results[c])
      t.rows.push_back({cfg.configs[c], format_number(pt.modulation_width), format_number(pt.S),
                        format_number(pt.p_succ), format_number(pt.modulation_probability), hash});
  return t;
}

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  std::vector<CheckResult> checks;
  auto run = [&](const std::string& name, const std::function<std::pair<bool, std::string>()>& body,
                 const std::string& on_error = "error") {
    CheckResult c{name, false, ""};
    try {
      std::tie(c.passed, c.detail) = body();
    } catch (const std::exception& e) {
      c.detail = on_error + ": " + e.what();
    }
    checks.push_back(std::move(c));
  };
  auto fmt = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return std::string(buf);
  };

  run("parseval", [&] {
    const Grid g(options.grid_xmax, options.grid_points);
    double worst = 0;
    for (const Wave& w : {fock(5, g), squeezed_cat(CatParams{Parity::even, 2.0, 1.0}, g)})
      worst = std::max(worst, std::abs(to_momentum(w).norm_squared() - w.norm_squared()));
    return std::make_pair(worst < 1e-8, "max norm change " + fmt(worst));
  });
  run("breeding_limit", [&] {
    const Grid g(options.grid_xmax, options.grid_points);
    double worst = 0;
    for (int p = 1; p <= 3; ++p) {
      const auto r = breed_cat(BreedingPlan::cat(p, Schedule::tight(), g.dx()), g);
      Wave out = r.state.dominant();
      const Wave ref = breeding_limit(1 << p, g);
      const CVec diff = out.amplitudes() * std::polar(1.0, -std::arg(inner(ref, out))) - ref.amplitudes();
      worst = std::max(worst, std::sqrt(diff.squaredNorm() * g.dx()));
    }
    return std::make_pair(worst < 1e-4, "max L2 distance " + fmt(worst));
  });
  run("comb_identity", [&] {
    const auto rep = herald_comb_identity_check(CombParams{LogicalBit::zero, 1.0, 0.1, 0.05}, Grid(128.0, 16384));
    const double f = std::min(rep.fidelity_zero, rep.fidelity_one);
    return std::make_pair(f > 0.99 && rep.condition_holds, "min fidelity " + fmt(f));
  });
  run("herald_completeness", [&] {
    const Grid g(options.grid_xmax, options.grid_points);
    const Kernel one(fock(1, g));
    double total = 0;
    for (const auto& [lo, hi] : std::vector<std::pair<double, double>>{{-30, -1}, {-1, 0.5}, {0.5, 30}})
      total += herald_mix(one, one, HeraldWindow::single((lo + hi) / 2, hi - lo, 8)).probability;
    return std::make_pair(std::abs(total - 1) < 1e-6, "sum of probabilities - 1 = " + fmt(total - 1));
  });
  run("loss_variance_law", [&] {
    const Grid g(options.grid_xmax, options.grid_points);
    const Wave sq = squeeze(vacuum(g), 1.6);
    const RVec d = sq.amplitudes().cwiseAbs2() * g.dx();
    const double T = 0.7;
    const double got = density_variance(g, lossy_marginal(g, d, LossChannel{T}));
    const double want = T * density_variance(g, d) + (1 - T) / 2;
    return std::make_pair(std::abs(got - want) < 1e-6, "variance error " + fmt(got - want));
  });

  std::optional<BellResource> weak;
  run("chsh_tsirelson", [&] {
    const BellConfiguration cfg = BellConfiguration::weak();
    weak = build_bell_resource(cfg, Grid(20.0, 2048));
    const auto r = CorrelatorEngine(weak->state, weak->measurement).evaluate(cfg.subtraction.theta);
    const bool bounded = std::max({std::abs(r.E_xx), std::abs(r.E_xp), std::abs(r.E_px), std::abs(r.E_pp)}) <= 1 &&
                         r.S <= 2 * std::numbers::sqrt2 + 1e-6;
    return std::make_pair(bounded && r.S > 2, "S(3,0) = " + fmt(r.S));
  });
  run("eps_p_parity", [&] {
    require(weak.has_value(), "Bell resource unavailable");
    const auto b = sign_binning(weak->f_ref, weak->g_ref, options.tamper_fourier_sign ? PhaseReference::edge : PhaseReference::centered);
    return std::make_pair(b.p_parity_ok, "imaginary residue " + fmt(b.max_imaginary_residue));
  });
  run(
      "grid_convergence",
      [&] {
        const Grid g(options.grid_xmax, options.grid_points);
        auto fid = [](const Grid& grid) {
          return fit_nearest_scs(breed_cat(BreedingPlan::cat(2, Schedule::geometric(0.5), grid.dx()), grid).state, 4.0)
              .fidelity;
        };
        const double d = std::abs(fid(g) - fid(g.refined()));
        return std::make_pair(d < 1e-4, (d < 1e-4 ? "fidelity change " : "degraded: fidelity change ") + fmt(d));
      },
      "degraded");
  return checks;
}

void print_checks(std::ostream& os, const std::vector<CheckResult>& checks) {
  os << std::left << std::setw(22) << "check" << std::setw(8) << "status" << "detail\n";
  for (const auto& c : checks)
    os << std::left << std::setw(22) << c.name << std::setw(8) << (c.passed ? "pass" : "FAIL") << c.detail << '\n';
}

}  // namespace cvbell::cli
