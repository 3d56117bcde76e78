#pragma once

#include <optional>
#include <vector>

#include "cvbell/optics.hpp"
#include "cvbell/qgrid.hpp"
#include "cvbell/states.hpp"

namespace cvbell {

// Per-stage herald widths: geometric (first_width * ratio^l) unless an explicit list is given.
// Widths at or below the grid spacing mean a single-node herald of one cell.
struct Schedule {
  double first_width = 0.0;
  double ratio = 1.3;
  int nodes = 5;
  std::vector<double> widths;

  static Schedule geometric(double first_width, double ratio = 1.3, int nodes = 5) {
    return {first_width, ratio, nodes, {}};
  }
  static Schedule explicit_widths(std::vector<double> list, int nodes = 5) { return {0.0, 1.3, nodes, std::move(list)}; }
  static Schedule tight() { return {0.0, 1.0, 1, {}}; }

  double width(int stage) const;
  HeraldWindow single_window(int stage, double dx) const;
  HeraldWindow periodic_window(int stage, double dx, double spacing, double offset) const;
};

enum class PlanKind { cat, comb };

struct BreedingPlan {
  PlanKind kind = PlanKind::cat;
  std::vector<HeraldWindow> stages;
  int target_n = 1;
  int p_prime = 0;
  double a0 = 0.0;
  LogicalBit final_bit = LogicalBit::zero;

  static BreedingPlan cat(int p, const Schedule& schedule, double dx);
  static BreedingPlan comb(int p_prime, double a0, const Schedule& schedule, double dx,
                           LogicalBit final_bit = LogicalBit::zero);
  double final_spacing() const;
};

// Expected single-photon cost of one success, with full discard of both inputs on a failed herald.
class ResourceLedger {
 public:
  static ResourceLedger single_photon();
  static ResourceLedger merge(const ResourceLedger& a, const ResourceLedger& b, double probability);
  static ResourceLedger combine(const std::vector<ResourceLedger>& parts, double probability);

  const std::vector<double>& stage_probabilities() const { return stages_; }
  double expected_resources() const { return expected_; }
  long minimal_resources() const { return minimal_; }
  double p_succ() const { return static_cast<double>(minimal_) / expected_; }

 private:
  std::vector<double> stages_;
  double expected_ = 1.0;
  long minimal_ = 1;
};

struct BreedResult {
  Kernel state;
  ResourceLedger ledger;
};

struct FidelityFit {
  double fidelity = 0.0;
  std::optional<CatParams> cat;
  std::optional<CombParams> comb;
  bool converged = false;
  bool condition_holds = true;
};

BreedResult breed_cat(const BreedingPlan& plan, const Grid& grid, CompressionOptions options = {});
BreedResult breed_n(int n, const Schedule& schedule, const Grid& grid, CompressionOptions options = {});
BreedResult breed_comb(const BreedingPlan& plan, const BreedResult& input_cat, const Grid& grid,
                       CompressionOptions options = {});

// Closed-form cat limit N psi1^n(x / sqrt n), i.e. x^n e^{-x^2/2}.
Wave breeding_limit(int n, const Grid& grid);

// Amplitude a0 = pi / (sqrt2 s' alpha) of the comb bred from an envelope cat.
double comb_seed_spacing(double alpha, double s_prime);

FidelityFit fit_nearest_scs(const Kernel& state, std::optional<double> photons = std::nullopt);
FidelityFit fit_nearest_scs(const Kernel& state, const CatParams& seed);
FidelityFit fit_nearest_comb(const Kernel& state, const CombParams& seed);

struct ScheduleOptimum {
  BreedingPlan plan;
  double fidelity = 0.0;
  double p_succ = 0.0;
  double rule_first_width = 0.0;
  double rule_p_succ = 0.0;
};

struct ScheduleSearch {
  int nodes = 5;
  double ratio = 1.3;
  int sweeps = 3;
  double width_tolerance = 1e-4;
  int max_first_width_steps = 12;
};

// Input of a comb-breeding schedule search.
struct CombSource {
  BreedResult cat;
  double a0 = 0.0;
  double s_prime = 0.0;
};

ScheduleOptimum optimize_schedule(PlanKind kind, int p, double target_fidelity, const Grid& grid,
                                  const ScheduleSearch& search = {},
                                  const std::optional<CombSource>& comb_source = std::nullopt);

// Largest first width of the geometric rule reaching the target fidelity.
double rule_first_width(int p, double target_fidelity, const Grid& grid, const ScheduleSearch& search = {});

}  // namespace cvbell
