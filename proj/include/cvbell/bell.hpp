#pragma once

#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvbell/breeding.hpp"
#include "cvbell/optics.hpp"
#include "cvbell/qgrid.hpp"
#include "cvbell/states.hpp"

namespace cvbell {

using Complex = std::complex<double>;
using CVec = CVector<double>;
using RVec = RVector<double>;

struct SubtractionConfig {
  double R = 0.001;
  double eta_apd = 0.06;
  double theta = -std::numbers::pi / 4;

  void validate() const;
};

struct ProductTerm {
  Complex coefficient;
  Wave a;
  Wave b;
};

// Two-mode pure state sum_t c_t |a_t>|b_t> with non-orthogonal factors.
class ProductSumState {
 public:
  explicit ProductSumState(std::vector<ProductTerm> terms);

  const std::vector<ProductTerm>& terms() const { return terms_; }
  const Grid& grid() const { return terms_.front().a.grid(); }
  std::size_t size() const { return terms_.size(); }

  double norm_squared() const;
  ProductSumState normalized() const;
  // Drops negligible terms, keeps at most cap of the heaviest and renormalizes.
  ProductSumState pruned(std::size_t cap = 16, double tolerance = 1e-12) const;

 private:
  std::vector<ProductTerm> terms_;
};

Complex inner(const ProductSumState& left, const ProductSumState& right);
double fidelity(const ProductSumState& left, const ProductSumState& right);

// One mixture component of a single mode: the mode's factor for every term.
struct ModeBranch {
  double weight = 1.0;
  std::vector<CVec> terms;
};

// rho = sum_{i,j} wA_i wB_j |Psi_ij><Psi_ij|, Psi_ij = sum_t c_t |A_i,t>|B_j,t> (unnormalized).
struct TwoModeEnsemble {
  Grid grid;
  std::vector<Complex> coefficients;
  std::vector<ModeBranch> mode_a;
  std::vector<ModeBranch> mode_b;

  static TwoModeEnsemble from_state(const ProductSumState& state);
  std::size_t term_count() const { return coefficients.size(); }
  double norm_squared() const;
  ProductSumState branch_state(std::size_t ia, std::size_t ib) const;
};

std::vector<Complex> subtraction_coefficients(double theta);

struct SubtractedState {
  ProductSumState state;
  double probability;
};

struct SubtractedEnsemble {
  TwoModeEnsemble state;
  double probability;
};

// (a_A + e^{i theta} a_B) acting on two unsqueezed cats; the tap-off enters only the probability.
SubtractedState delocalized_subtract(const Wave& cat_a, const Wave& cat_b, const SubtractionConfig& cfg);
// Mixed inputs with envelope s': unsqueezed to s' = 1, annihilated, squeezed back.
SubtractedEnsemble delocalized_subtract(const Kernel& cat_a, const Kernel& cat_b, const SubtractionConfig& cfg,
                                        double s_prime = 1.0);

struct ModulationBookkeeping {
  double alpha = 0.0;
  double alpha_prime = 0.0;
  double s_prime = 0.0;
  double a = 0.0;
  int p_prime = 0;
  double tolerance = 0.05;

  double spacing_mismatch() const;
  double amplitude_mismatch() const;
  void check() const;
};

struct ModulatedEnsemble {
  TwoModeEnsemble state;
  double probability;
};

// Each mode meets a comb |1> on a symmetric beamsplitter with a homodyne herald.
ModulatedEnsemble modulation_stage(const TwoModeEnsemble& input, const Kernel& comb_one, const HeraldWindow& window_a,
                                   const HeraldWindow& window_b,
                                   const std::optional<ModulationBookkeeping>& bookkeeping = std::nullopt);

// Equivalent ensemble with at most cap branches per mode (exact up to the tolerance).
TwoModeEnsemble compress_branches(const TwoModeEnsemble& ensemble, double tolerance = 1e-13, std::size_t cap = 64);

// Piecewise constant +-1 function: value `left` below the first crossing, flipping at each.
struct SignFunction {
  double left = 1.0;
  std::vector<double> crossings;

  double operator()(double x) const;
  SignFunction mirrored() const;
};

// Sign of the band-limited interpolant of real samples, crossings located by bisection.
SignFunction sign_of(const Grid& grid, const RVec& values, const RVec& activity);

// Integration weights w_j with sum_j w_j rho_j = E[eps(scale x + noise)] for band-limited rho.
RVec integration_weights(const SignFunction& eps, const Grid& grid, const QuadratureNoise& noise = {});

struct SignBinning {
  SignFunction x;
  SignFunction p;
  double max_imaginary_residue = 0.0;
  bool p_parity_ok = false;
};

SignBinning sign_binning(const Wave& f, const Wave& g, PhaseReference phase = PhaseReference::centered);

// Mode B reads p with the opposite local-oscillator sign.
struct BellMeasurement {
  SignFunction x_a, p_a, x_b, p_b;

  static BellMeasurement from_binning(const SignBinning& binning);
};

enum class ReceiverModel { calibrated, physical };

struct ChannelSettings {
  double transmission_a = 1.0;
  double transmission_b = 1.0;
  double presqueeze = 1.0;
  ReceiverModel model = ReceiverModel::calibrated;

  static ChannelSettings symmetric(double T, double presqueeze = 1.0,
                                   ReceiverModel model = ReceiverModel::calibrated);
  QuadratureNoise x_noise(double T) const;
  QuadratureNoise p_noise(double T) const;
};

struct CHSHResult {
  double E_xx = 0, E_xp = 0, E_px = 0, E_pp = 0;
  double S = 0;
  double theta = 0;
  double transmission = 1;
  double presqueeze = 1;
};

double chsh_value(double E_xx, double E_xp, double E_px, double E_pp);

// Term-pair cross densities of both modes, reused across theta, loss and pre-squeeze.
class CorrelatorEngine {
 public:
  CorrelatorEngine(const TwoModeEnsemble& ensemble, BellMeasurement measurement);

  CHSHResult evaluate(double theta, const ChannelSettings& channel = {}) const;
  CHSHResult evaluate(const std::vector<Complex>& coefficients, const ChannelSettings& channel = {}) const;
  double norm(const std::vector<Complex>& coefficients) const;
  std::pair<double, double> mean_photons(const std::vector<Complex>& coefficients) const;
  const Grid& grid() const { return grid_; }

 private:
  struct ModeDensities {
    std::vector<CVec> x;  // index t * T + t'
    std::vector<CVec> p;
  };
  static ModeDensities densities(const Grid& grid, const std::vector<ModeBranch>& branches, std::size_t terms);
  CMatrix<double> reduce(const std::vector<CVec>& dens, const RVec& weights) const;

  Grid grid_;
  std::size_t terms_;
  BellMeasurement measurement_;
  ModeDensities a_, b_;
};

// Direct route through the two-mode joint distributions (dense n x n per setting).
CHSHResult chsh_direct(const TwoModeEnsemble& ensemble, const BellMeasurement& measurement, double theta,
                       const QuadratureNoise& x_noise = {}, const QuadratureNoise& p_noise = {});

std::vector<CHSHResult> theta_sweep(const CorrelatorEngine& engine, int points = 64,
                                    const ChannelSettings& channel = {});

enum class PresqueezePolicy { optimized, unit, inverse_envelope };

struct LossCurve {
  PresqueezePolicy policy = PresqueezePolicy::optimized;
  std::vector<CHSHResult> points;
  std::optional<double> crossing;
};

// S at transmission T for the given pre-squeeze policy (golden search on log s when optimized).
CHSHResult loss_point(const CorrelatorEngine& engine, double theta, double T, PresqueezePolicy policy,
                      double envelope_s_prime, ReceiverModel model = ReceiverModel::calibrated);

// Transmission where S falls to 2, by bisection; empty if S <= 2 at T = 1 or S > 2 at T = lo.
std::optional<double> crossing_transmission(const CorrelatorEngine& engine, double theta, PresqueezePolicy policy,
                                            double envelope_s_prime, ReceiverModel model = ReceiverModel::calibrated,
                                            double lo = 0.3, double tolerance = 1e-3);

LossCurve loss_sweep(const CorrelatorEngine& engine, double theta, const std::vector<double>& transmissions,
                     PresqueezePolicy policy, double envelope_s_prime,
                     ReceiverModel model = ReceiverModel::calibrated, bool with_crossing = true);

enum class BinningReference { generated, analytic };

struct BellConfiguration {
  std::string label = "(6,2)";
  int p = 6;
  int p_prime = 2;
  Schedule cat_schedule = Schedule::tight();
  Schedule comb_schedule = Schedule::tight();
  double modulation_width = 0.0;  // at or below dx: one-cell herald
  int modulation_nodes = 5;
  std::optional<double> envelope;  // s' carried through the pipeline; default is the bred 1/sqrt2
  double bookkeeping_tolerance = 0.05;
  SubtractionConfig subtraction;
  BinningReference reference = BinningReference::generated;

  static BellConfiguration strong();
  static BellConfiguration weak();
  void validate() const;
};

inline Grid default_bell_grid() { return Grid(32.0, 4096); }

// Bred inputs of the pipeline, shared by every modulation setting.
struct BellSources {
  Kernel comb;
  Kernel modulation_cat;
  ResourceLedger comb_ledger;
  ResourceLedger cat_ledger;
  CombParams comb_params;
  double alpha = 0.0;
  double alpha_prime = 0.0;
  double s_prime = 0.0;
};

BellSources prepare_sources(const BellConfiguration& cfg, const Grid& grid);

struct PipelineLedger {
  double expected_resources = 0.0;
  long minimal_resources = 0;
  double p_succ() const { return static_cast<double>(minimal_resources) / expected_resources; }
};

// Every input is discarded and re-prepared on any failed herald, the tap-off included.
PipelineLedger compose_pipeline_ledger(const ResourceLedger& cat, const ResourceLedger& comb,
                                       double subtraction_probability, double modulation_probability);

struct BellResource {
  TwoModeEnsemble state;
  BellMeasurement measurement;
  SignBinning binning;
  FGParams fg;
  Wave f_ref, g_ref;
  double subtraction_probability = 0.0;
  double modulation_probability = 0.0;
  PipelineLedger ledger;
  double fidelity_f = 0.0;  // even factor of mode A vs the analytic f
  double fidelity_g = 0.0;  // odd factor of mode A vs the analytic g
  double nbar_a = 0.0, nbar_b = 0.0;
};

BellResource assemble(const BellSources& sources, const BellConfiguration& cfg);
BellResource build_bell_resource(const BellConfiguration& cfg, const Grid& grid);

struct PipelinePoint {
  double modulation_width = 0.0;
  double S = 0.0;
  double p_succ = 0.0;
  double modulation_probability = 0.0;
};

std::vector<PipelinePoint> pipeline_success(const BellSources& sources, const BellConfiguration& cfg,
                                            const std::vector<double>& modulation_widths);

}  // namespace cvbell
