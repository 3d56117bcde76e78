#include "cvbell/bell.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cvbell/optimize.hpp"

namespace cvbell {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSqrt2 = std::numbers::sqrt2;

double l2(const CVec& v, double dx) { return v.squaredNorm() * dx; }

// Orthonormal (unit l2) columns and absolute weights with sum_k w_k v_k v_k^H ~ cols cols^H.
struct Compressed {
  CMatrix<double> vectors;
  RVec weights;
};

Compressed compress_columns(const CMatrix<double>& cols, double tolerance, Eigen::Index cap) {
  const double peak = cols.cwiseAbs().maxCoeff();
  if (!(peak > 0) || !std::isfinite(peak)) throw NumericalGuardError("branch ensemble has zero or non-finite weight");
  const CMatrix<double> scaled = cols / peak;
  Eigen::SelfAdjointEigenSolver<CMatrix<double>> eig(scaled.adjoint() * scaled);
  const RVec lambda = eig.eigenvalues().reverse().cwiseMax(0.0);
  const double total = lambda.sum();
  if (!(total > 0)) throw NumericalGuardError("branch ensemble has zero weight");
  Eigen::Index keep = 0;
  while (keep < lambda.size() && keep < cap && lambda[keep] > tolerance * total) ++keep;
  keep = std::max<Eigen::Index>(keep, 1);
  const CMatrix<double> basis = scaled * eig.eigenvectors().rowwise().reverse().leftCols(keep);
  Eigen::HouseholderQR<CMatrix<double>> qr(basis);
  const CMatrix<double> q = qr.householderQ() * CMatrix<double>::Identity(basis.rows(), keep);
  const CMatrix<double> r = qr.matrixQR().topRows(keep).triangularView<Eigen::Upper>();
  Eigen::SelfAdjointEigenSolver<CMatrix<double>> small(r * r.adjoint());
  Compressed out;
  out.vectors = q * small.eigenvectors().rowwise().reverse();
  out.weights = small.eigenvalues().reverse().cwiseMax(0.0) * (peak * peak);
  return out;
}

// Streams weighted branches into a bounded-rank equivalent ensemble.
class BranchCompressor {
 public:
  BranchCompressor(Eigen::Index length, double tolerance, Eigen::Index cap)
      : length_(length), tolerance_(tolerance), cap_(cap) {}

  void add(const CVec& stacked, double weight) {
    pending_.push_back(stacked * std::sqrt(weight));
    if (static_cast<Eigen::Index>(pending_.size()) >= 4 * cap_ + 64) flush(1e-15, 2 * cap_);
  }

  Compressed result() {
    flush(tolerance_, cap_);
    if (acc_.cols() == 0) throw NumericalGuardError("branch ensemble is empty");
    return compress_columns(acc_, tolerance_, cap_);
  }

 private:
  void flush(double tol, Eigen::Index cap) {
    if (pending_.empty()) return;
    CMatrix<double> cols(length_, acc_.cols() + static_cast<Eigen::Index>(pending_.size()));
    cols.leftCols(acc_.cols()) = acc_;
    for (std::size_t c = 0; c < pending_.size(); ++c) cols.col(acc_.cols() + static_cast<Eigen::Index>(c)) = pending_[c];
    pending_.clear();
    const Compressed part = compress_columns(cols, tol, cap);
    acc_ = part.vectors;
    for (Eigen::Index k = 0; k < acc_.cols(); ++k) acc_.col(k) *= std::sqrt(part.weights[k]);
  }

  Eigen::Index length_;
  double tolerance_;
  Eigen::Index cap_;
  CMatrix<double> acc_;
  std::vector<CVec> pending_;
};

std::vector<ModeBranch> compress_mode(const std::vector<ModeBranch>& branches, std::size_t terms, Eigen::Index n,
                                      double tolerance, std::size_t cap) {
  const Eigen::Index T = static_cast<Eigen::Index>(terms);
  BranchCompressor comp(T * n, tolerance, static_cast<Eigen::Index>(cap));
  for (const auto& b : branches) {
    CVec stacked(T * n);
    for (Eigen::Index t = 0; t < T; ++t) stacked.segment(t * n, n) = b.terms[static_cast<std::size_t>(t)];
    comp.add(stacked, b.weight);
  }
  const Compressed c = comp.result();
  std::vector<ModeBranch> out;
  for (Eigen::Index k = 0; k < c.vectors.cols(); ++k) {
    if (!(c.weights[k] > 0)) continue;
    ModeBranch b;
    b.weight = c.weights[k];
    for (Eigen::Index t = 0; t < T; ++t) b.terms.push_back(c.vectors.col(k).segment(t * n, n));
    out.push_back(std::move(b));
  }
  return out;
}

// sum_b w_b <v_bt | v_bt'> dx for one mode.
CMatrix<double> mode_gram(const std::vector<ModeBranch>& branches, std::size_t terms, double dx) {
  const Eigen::Index T = static_cast<Eigen::Index>(terms);
  CMatrix<double> g = CMatrix<double>::Zero(T, T);
  for (const auto& b : branches)
    for (Eigen::Index s = 0; s < T; ++s)
      for (Eigen::Index t = 0; t < T; ++t)
        g(s, t) += b.weight * b.terms[static_cast<std::size_t>(s)].dot(b.terms[static_cast<std::size_t>(t)]) * dx;
  return g;
}

Complex contract(const std::vector<Complex>& c, const CMatrix<double>& qa, const CMatrix<double>& qb) {
  Complex sum = 0;
  const Eigen::Index T = static_cast<Eigen::Index>(c.size());
  for (Eigen::Index s = 0; s < T; ++s)
    for (Eigen::Index t = 0; t < T; ++t)
      sum += std::conj(c[static_cast<std::size_t>(s)]) * c[static_cast<std::size_t>(t)] * qa(s, t) * qb(s, t);
  return sum;
}

double term_support_radius(const Grid& g, const std::vector<ModeBranch>& branches) {
  RVec d = RVec::Zero(g.size());
  for (const auto& b : branches)
    for (const auto& v : b.terms) d += b.weight * v.cwiseAbs2();
  const double peak = d.maxCoeff();
  double r = 0;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (d[i] > 1e-30 * peak) r = std::max(r, std::abs(g.x(i)));
  return r + g.dx();
}

std::vector<ModeBranch> modulate_mode(const Grid& g, const std::vector<ModeBranch>& in, const Kernel& comb,
                                      const HeraldWindow& window) {
  window.validate();
  const Eigen::Index n = g.size();
  const spectral::Resampler<double> rs(n, g.x(0), g.dx(), g.dx() / kSqrt2, n);
  const double bound = (term_support_radius(g, in) + detail::support_radius(comb)) / kSqrt2;
  const auto samples = window.samples(bound);
  require(!samples.empty(), "modulation window accepts no outcome inside the grid");

  std::vector<std::vector<CVec>> term_spectra;
  for (const auto& b : in) {
    std::vector<CVec> s;
    for (const auto& v : b.terms) s.push_back(rs.spectrum(v));
    term_spectra.push_back(std::move(s));
  }
  std::vector<CVec> comb_spectra;
  for (Eigen::Index k = 0; k < comb.rank(); ++k) comb_spectra.push_back(rs.spectrum(comb.vectors().col(k)));

  std::vector<ModeBranch> out;
  for (const auto& [xm, omega] : samples) {
    if (std::abs(xm) > bound) continue;
    std::vector<CVec> comb_port;
    for (const auto& s : comb_spectra) comb_port.push_back(rs.from_spectrum(s, (g.x(0) - xm) / kSqrt2));
    for (std::size_t b = 0; b < in.size(); ++b) {
      std::vector<CVec> port;
      for (const auto& s : term_spectra[b]) port.push_back(rs.from_spectrum(s, (g.x(0) + xm) / kSqrt2));
      for (Eigen::Index k = 0; k < comb.rank(); ++k) {
        ModeBranch nb;
        nb.weight = in[b].weight * omega * comb.weights()[k];
        double mass = 0;
        for (const auto& v : port) {
          nb.terms.push_back(v.cwiseProduct(comb_port[static_cast<std::size_t>(k)]));
          mass += l2(nb.terms.back(), g.dx());
        }
        if (mass * nb.weight > 1e-250) out.push_back(std::move(nb));
      }
    }
  }
  if (out.empty()) throw NumericalGuardError("modulation herald has zero probability");
  return out;
}

// Trigonometric interpolant of real samples (Nyquist dropped), evaluated pointwise.
class BandLimited {
 public:
  BandLimited(const Grid& g, const RVec& values) : g_(g) {
    const Eigen::Index n = g.size();
    const CVec raw = spectral::forward<double>(values.cast<Complex>()) / static_cast<double>(n);
    coef_.resize(n - 1);
    for (Eigen::Index q = 0; q < n - 1; ++q) {
      const Eigen::Index m = q - (n / 2 - 1);
      coef_[q] = raw[(m + n) % n];
    }
  }

  double operator()(double x) const {
    const Eigen::Index n = g_.size();
    const long double dk = 2.0L * std::numbers::pi_v<long double> / (static_cast<long double>(n) * g_.dx());
    const long double t = static_cast<long double>(x) - g_.x(0);
    const CVec ramp = spectral::phase_ramp<double>(-(n / 2 - 1) * dk * t, dk * t, n - 1);
    return std::real(ramp.cwiseProduct(coef_).sum());
  }

 private:
  Grid g_;
  CVec coef_;
};

double refine_root(const BandLimited& f, double lo, double hi, double flo) {
  for (int it = 0; it < 60 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0) return mid;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

bool odd_symmetric(const SignFunction& eps, double tol) {
  const SignFunction m = eps.mirrored();
  if (m.left != -eps.left || m.crossings.size() != eps.crossings.size()) return false;
  for (std::size_t k = 0; k < m.crossings.size(); ++k)
    if (std::abs(m.crossings[k] - eps.crossings[k]) > tol) return false;
  return true;
}

Wave phase_aligned(const CVec& v, const Grid& g) {
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  const Complex rot = std::polar(1.0, -std::arg(v[imax]));
  return normalize(Wave(g, (v * rot).real().cast<Complex>()));
}

double conditional_fidelity(const std::vector<ModeBranch>& branches, std::size_t term, const Wave& ref) {
  const Grid& g = ref.grid();
  double num = 0, den = 0;
  for (const auto& b : branches) {
    const CVec& v = b.terms[term];
    num += b.weight * std::norm(ref.amplitudes().dot(v) * g.dx());
    den += b.weight * l2(v, g.dx());
  }
  return num / (den * ref.norm_squared());
}

HeraldWindow modulation_window(const BellConfiguration& cfg, double dx) {
  if (cfg.modulation_width <= dx) return HeraldWindow::tight(dx);
  return HeraldWindow::single(0.0, cfg.modulation_width, cfg.modulation_nodes);
}

ModulationBookkeeping bookkeeping_of(const BellSources& s, const BellConfiguration& cfg) {
  return {s.alpha, s.alpha_prime, s.s_prime, s.comb_params.a, cfg.p_prime, cfg.bookkeeping_tolerance};
}

std::size_t heaviest_branch(const std::vector<ModeBranch>& branches, std::size_t term) {
  std::size_t best = 0;
  double best_mass = -1;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const double m = branches[b].weight * branches[b].terms[term].squaredNorm();
    if (m > best_mass) {
      best_mass = m;
      best = b;
    }
  }
  return best;
}

// Index of the mode-A factor with even parity (the f-like one).
std::size_t even_term(const TwoModeEnsemble& e) {
  const auto& br = e.mode_a[heaviest_branch(e.mode_a, 0)];
  return parity_overlap(Wave(e.grid, br.terms[0])) > 0 ? 0 : 1;
}

// Pipeline-generated references: tight modulation, heaviest branch of mode A.
std::pair<Wave, Wave> generated_references(const TwoModeEnsemble& tight) {
  const std::size_t f = even_term(tight), g = 1 - f;
  const auto& br = tight.mode_a[heaviest_branch(tight.mode_a, f)];
  return {phase_aligned(br.terms[f], tight.grid), phase_aligned(br.terms[g], tight.grid)};
}

BellResource assemble_with(const BellSources& sources, const BellConfiguration& cfg,
                           const std::optional<std::pair<Wave, Wave>>& references) {
  const Grid& g = sources.comb.grid();
  const double dx = g.dx();
  auto sub = delocalized_subtract(sources.modulation_cat, sources.modulation_cat, cfg.subtraction, sources.s_prime);
  const HeraldWindow window = modulation_window(cfg, dx);
  auto mod = modulation_stage(sub.state, sources.comb, window, window, bookkeeping_of(sources, cfg));

  BellResource r{mod.state, {}, {}, FGParams::from_comb(sources.comb_params),
                 fg_reference(FGParams::from_comb(sources.comb_params), FGKind::f, g),
                 fg_reference(FGParams::from_comb(sources.comb_params), FGKind::g, g), sub.probability,
                 mod.probability,
                 compose_pipeline_ledger(sources.cat_ledger, sources.comb_ledger, sub.probability, mod.probability)};
  const std::size_t f_term = even_term(mod.state);
  r.fidelity_f = conditional_fidelity(mod.state.mode_a, f_term, r.f_ref);
  r.fidelity_g = conditional_fidelity(mod.state.mode_a, 1 - f_term, r.g_ref);

  if (cfg.reference == BinningReference::generated) {
    if (references) {
      r.binning = sign_binning(references->first, references->second);
    } else if (window.is_tight(dx)) {
      const auto [f, gg] = generated_references(mod.state);
      r.binning = sign_binning(f, gg);
    } else {
      const auto tight = modulation_stage(sub.state, sources.comb, HeraldWindow::tight(dx), HeraldWindow::tight(dx));
      const auto [f, gg] = generated_references(tight.state);
      r.binning = sign_binning(f, gg);
    }
  } else {
    r.binning = sign_binning(r.f_ref, r.g_ref);
  }
  r.measurement = BellMeasurement::from_binning(r.binning);
  const CorrelatorEngine engine(r.state, r.measurement);
  std::tie(r.nbar_a, r.nbar_b) = engine.mean_photons(r.state.coefficients);
  return r;
}

}  // namespace

void SubtractionConfig::validate() const {
  require(R > 0 && R <= 1, "tap-off reflectivity must lie in (0, 1]");
  require(eta_apd > 0 && eta_apd <= 1, "APD efficiency must lie in (0, 1]");
  require(std::isfinite(theta), "subtraction phase must be finite");
}

ProductSumState::ProductSumState(std::vector<ProductTerm> terms) : terms_(std::move(terms)) {
  require(!terms_.empty(), "product-sum state needs at least one term");
  for (const auto& t : terms_) {
    require_same_grid(t.a.grid(), terms_.front().a.grid());
    require_same_grid(t.b.grid(), terms_.front().a.grid());
  }
}

double ProductSumState::norm_squared() const { return std::real(inner(*this, *this)); }

ProductSumState ProductSumState::normalized() const {
  const double n2 = norm_squared();
  require(n2 > 0, "cannot normalize a zero two-mode state");
  std::vector<ProductTerm> out = terms_;
  for (auto& t : out) t.coefficient /= std::sqrt(n2);
  return ProductSumState(std::move(out));
}

ProductSumState ProductSumState::pruned(std::size_t cap, double tolerance) const {
  std::vector<std::pair<double, std::size_t>> size;
  for (std::size_t k = 0; k < terms_.size(); ++k)
    size.emplace_back(std::norm(terms_[k].coefficient) * terms_[k].a.norm_squared() * terms_[k].b.norm_squared(), k);
  std::stable_sort(size.begin(), size.end(), [](const auto& l, const auto& r) { return l.first > r.first; });
  const double top = size.front().first;
  std::vector<std::size_t> keep;
  for (const auto& [w, k] : size)
    if (keep.size() < cap && w > tolerance * top) keep.push_back(k);
  std::sort(keep.begin(), keep.end());
  std::vector<ProductTerm> out;
  for (auto k : keep) out.push_back(terms_[k]);
  return ProductSumState(std::move(out)).normalized();
}

Complex inner(const ProductSumState& left, const ProductSumState& right) {
  Complex sum = 0;
  for (const auto& l : left.terms())
    for (const auto& r : right.terms())
      sum += std::conj(l.coefficient) * r.coefficient * inner(l.a, r.a) * inner(l.b, r.b);
  return sum;
}

double fidelity(const ProductSumState& left, const ProductSumState& right) {
  return std::norm(inner(left, right)) / (left.norm_squared() * right.norm_squared());
}

TwoModeEnsemble TwoModeEnsemble::from_state(const ProductSumState& state) {
  TwoModeEnsemble e{state.grid(), {}, {ModeBranch{}}, {ModeBranch{}}};
  for (const auto& t : state.terms()) {
    e.coefficients.push_back(t.coefficient);
    e.mode_a[0].terms.push_back(t.a.amplitudes());
    e.mode_b[0].terms.push_back(t.b.amplitudes());
  }
  return e;
}

double TwoModeEnsemble::norm_squared() const {
  return std::real(contract(coefficients, mode_gram(mode_a, term_count(), grid.dx()),
                            mode_gram(mode_b, term_count(), grid.dx())));
}

ProductSumState TwoModeEnsemble::branch_state(std::size_t ia, std::size_t ib) const {
  std::vector<ProductTerm> terms;
  const double scale = std::sqrt(mode_a.at(ia).weight * mode_b.at(ib).weight);
  for (std::size_t t = 0; t < term_count(); ++t)
    terms.push_back({coefficients[t] * scale, Wave(grid, mode_a[ia].terms[t]), Wave(grid, mode_b[ib].terms[t])});
  return ProductSumState(std::move(terms));
}

std::vector<Complex> subtraction_coefficients(double theta) { return {Complex(1.0), std::polar(1.0, theta)}; }

SubtractedState delocalized_subtract(const Wave& cat_a, const Wave& cat_b, const SubtractionConfig& cfg) {
  cfg.validate();
  require_same_grid(cat_a.grid(), cat_b.grid());
  const Wave ua = normalize(cat_a), ub = normalize(cat_b);
  const Wave aa(ua.grid(), apply_annihilation(ua)), ab(ub.grid(), apply_annihilation(ub));
  const double na = aa.norm_squared(), nb = ab.norm_squared();
  if (na < 1e-10 && nb < 1e-10) throw PreconditionError("delocalized subtraction on states without photons");
  const auto c = subtraction_coefficients(cfg.theta);
  std::vector<ProductTerm> terms;
  if (na >= 1e-10) terms.push_back({c[0], aa, ub});
  if (nb >= 1e-10) terms.push_back({c[1], ua, ab});
  const double p = std::min(1.0, cfg.eta_apd * cfg.R * (na + nb));
  return {ProductSumState(std::move(terms)).normalized(), p};
}

SubtractedEnsemble delocalized_subtract(const Kernel& cat_a, const Kernel& cat_b, const SubtractionConfig& cfg,
                                        double s_prime) {
  cfg.validate();
  require(s_prime > 0, "envelope factor must be positive");
  require_same_grid(cat_a.grid(), cat_b.grid());
  const Grid& g = cat_a.grid();
  auto lowered = [&](const Kernel& rho, double& nbar) {
    std::vector<std::pair<CVec, CVec>> out;
    nbar = 0;
    for (Eigen::Index i = 0; i < rho.rank(); ++i) {
      const Wave u = squeeze(rho.component(i), 1 / s_prime);
      const Wave au(g, apply_annihilation(u));
      nbar += rho.weights()[i] * au.norm_squared() / u.norm_squared();
      out.emplace_back(rho.vectors().col(i), squeeze(au, s_prime).amplitudes());
    }
    return out;
  };
  double na = 0, nb = 0;
  const auto la = lowered(cat_a, na);
  const auto lb = lowered(cat_b, nb);
  if (na < 1e-10 && nb < 1e-10) throw PreconditionError("delocalized subtraction on states without photons");
  TwoModeEnsemble e{g, subtraction_coefficients(cfg.theta), {}, {}};
  for (Eigen::Index i = 0; i < cat_a.rank(); ++i)
    e.mode_a.push_back({cat_a.weights()[i], {la[static_cast<std::size_t>(i)].second, la[static_cast<std::size_t>(i)].first}});
  for (Eigen::Index j = 0; j < cat_b.rank(); ++j)
    e.mode_b.push_back({cat_b.weights()[j], {lb[static_cast<std::size_t>(j)].first, lb[static_cast<std::size_t>(j)].second}});
  const double n2 = e.norm_squared();
  for (auto& b : e.mode_a) b.weight /= n2;
  return {std::move(e), std::min(1.0, cfg.eta_apd * cfg.R * (na + nb))};
}

double ModulationBookkeeping::spacing_mismatch() const {
  return std::abs(s_prime * alpha_prime * a / (kPi / (2 * kSqrt2)) - 1);
}

double ModulationBookkeeping::amplitude_mismatch() const {
  return std::abs(alpha / (std::sqrt(std::pow(2.0, 2 + p_prime)) * alpha_prime) - 1);
}

void ModulationBookkeeping::check() const {
  const double ds = spacing_mismatch(), da = amplitude_mismatch();
  if (ds > tolerance)
    throw PreconditionError("modulation bookkeeping violated: s'a'a = pi/(2 sqrt2) off by " +
                            std::to_string(100 * ds) + "%");
  if (da > tolerance)
    throw PreconditionError("modulation bookkeeping violated: alpha = sqrt(2^(2+p')) alpha' off by " +
                            std::to_string(100 * da) + "%");
}

ModulatedEnsemble modulation_stage(const TwoModeEnsemble& input, const Kernel& comb_one, const HeraldWindow& window_a,
                                   const HeraldWindow& window_b,
                                   const std::optional<ModulationBookkeeping>& bookkeeping) {
  if (bookkeeping) bookkeeping->check();
  require_same_grid(input.grid, comb_one.grid());
  TwoModeEnsemble out{input.grid, input.coefficients, modulate_mode(input.grid, input.mode_a, comb_one, window_a),
                      modulate_mode(input.grid, input.mode_b, comb_one, window_b)};
  out = compress_branches(out);
  const double before = input.norm_squared(), after = out.norm_squared();
  if (!(after > 0)) throw NumericalGuardError("modulation herald has zero probability");
  return {std::move(out), after / before};
}

TwoModeEnsemble compress_branches(const TwoModeEnsemble& ensemble, double tolerance, std::size_t cap) {
  TwoModeEnsemble out = ensemble;
  const Eigen::Index n = ensemble.grid.size();
  if (out.mode_a.size() > cap) out.mode_a = compress_mode(ensemble.mode_a, ensemble.term_count(), n, tolerance, cap);
  if (out.mode_b.size() > cap) out.mode_b = compress_mode(ensemble.mode_b, ensemble.term_count(), n, tolerance, cap);
  return out;
}

double SignFunction::operator()(double x) const {
  const auto flips = std::upper_bound(crossings.begin(), crossings.end(), x) - crossings.begin();
  return flips % 2 == 0 ? left : -left;
}

SignFunction SignFunction::mirrored() const {
  SignFunction m;
  m.left = crossings.size() % 2 == 0 ? left : -left;
  for (auto it = crossings.rbegin(); it != crossings.rend(); ++it) m.crossings.push_back(-*it);
  return m;
}

SignFunction sign_of(const Grid& grid, const RVec& values, const RVec& activity) {
  const Eigen::Index n = grid.size();
  require(values.size() == n && activity.size() == n, "binning samples do not match grid");
  const double amax = activity.maxCoeff();
  require(amax > 0, "binning reference vanishes identically");
  const BandLimited interp(grid, values);
  SignFunction eps;
  double prev_sign = 0;
  Eigen::Index prev = -1;
  Eigen::Index zero_run = 0;
  bool gap_inactive = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(activity[j] > 1e-14 * amax)) {
      gap_inactive = true;
      zero_run = 0;
      continue;
    }
    const double v = values[j];
    if (v == 0) {
      if (++zero_run > 10)
        throw PreconditionError("binning reference product vanishes on an interval wider than 10 grid cells near x = " +
                                std::to_string(grid.x(j)));
      continue;
    }
    zero_run = 0;
    const double s = v > 0 ? 1.0 : -1.0;
    if (prev < 0) {
      eps.left = s;
    } else if (s != prev_sign) {
      double c;
      if (j == prev + 1)
        c = refine_root(interp, grid.x(prev), grid.x(j), values[prev]);
      else if (!gap_inactive && j == prev + 2)
        c = grid.x(prev + 1);
      else
        c = 0.5 * (grid.x(prev) + grid.x(j));
      eps.crossings.push_back(c);
    }
    prev_sign = s;
    prev = j;
    gap_inactive = false;
  }
  require(prev >= 0, "binning reference product vanishes identically");
  return eps;
}

RVec integration_weights(const SignFunction& eps, const Grid& grid, const QuadratureNoise& noise) {
  require(noise.scale > 0 && noise.variance >= 0, "noise map needs a positive scale and non-negative variance");
  const Eigen::Index n = grid.size();
  const double x0 = grid.x(0), dx = grid.dx(), end = x0 + n * dx;
  const double sigma = std::sqrt(noise.variance) / noise.scale;
  double left = eps.left;
  std::vector<double> cuts;
  for (double c : eps.crossings) {
    const double cs = c / noise.scale;
    if (cs <= x0)
      left = -left;
    else if (cs < end)
      cuts.push_back(cs);
  }
  // Jumps Delta_c of the step function at each retained crossing.
  std::vector<double> jumps;
  double value = left;
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    jumps.push_back(-2 * value);
    value = -value;
  }
  const Eigen::Index count = n - 1;  // frequencies -(n/2-1) .. n/2-1
  const long double dk = 2.0L * std::numbers::pi_v<long double> / (static_cast<long double>(n) * dx);
  const Eigen::Index m0 = -(n / 2 - 1);
  CVec h = CVec::Zero(count);
  double total = 0, linear = 0;
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    const long double t = static_cast<long double>(cuts[k]) - x0;
    h += jumps[k] * spectral::phase_ramp<double>(m0 * dk * t, dk * t, count);
    total += jumps[k];
    linear += jumps[k] * (end - cuts[k]);
  }
  CVec q(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index m = m0 + i;
    if (m == 0) {
      q[i] = 0;
      continue;
    }
    const double k = static_cast<double>(dk) * static_cast<double>(m);
    q[i] = std::exp(-k * k * sigma * sigma / 2) * (total - h[i]) / Complex(0, k);
  }
  const CVec s = spectral::exponential_sum<double>(q, static_cast<double>(m0 * dk), static_cast<double>(dk), 0.0, dx,
                                                   n, -1);
  return RVec::Constant(n, left * dx) + (s.real().array() + linear).matrix() / static_cast<double>(n);
}

SignBinning sign_binning(const Wave& f, const Wave& g, PhaseReference phase) {
  require_same_grid(f.grid(), g.grid());
  const Grid& grid = f.grid();
  auto real_part = [](const Wave& w, const char* name) {
    const double peak = w.amplitudes().cwiseAbs().maxCoeff();
    require(w.amplitudes().imag().cwiseAbs().maxCoeff() <= 1e-6 * peak,
            std::string("binning reference ") + name + " is not real in position");
    return RVec(w.amplitudes().real());
  };
  const RVec fr = real_part(f, "f"), gr = real_part(g, "g");
  SignBinning b;
  b.x = sign_of(grid, fr.cwiseProduct(gr), fr.cwiseAbs2() + gr.cwiseAbs2());

  const CVec ft = momentum_samples(Wave(grid, fr.cast<Complex>()), grid, phase);
  const CVec gt = momentum_samples(Wave(grid, gr.cast<Complex>()), grid, phase);
  const CVec q = ft.cwiseProduct(gt) / Complex(0, 1);
  b.max_imaginary_residue = q.imag().cwiseAbs().maxCoeff() / q.cwiseAbs().maxCoeff();
  b.p = sign_of(grid, q.real(), ft.cwiseAbs2() + gt.cwiseAbs2());
  b.p_parity_ok = b.max_imaginary_residue < 1e-6 && odd_symmetric(b.p, 1e-2 * grid.dx());
  return b;
}

BellMeasurement BellMeasurement::from_binning(const SignBinning& binning) {
  return {binning.x, binning.p, binning.x, binning.p.mirrored()};
}

ChannelSettings ChannelSettings::symmetric(double T, double presqueeze, ReceiverModel model) {
  return {T, T, presqueeze, model};
}

QuadratureNoise ChannelSettings::x_noise(double T) const {
  LossChannel{T}.validate();
  require(presqueeze > 0, "pre-squeeze factor must be positive");
  if (model == ReceiverModel::calibrated) return {1.0, presqueeze * presqueeze * (1 - T) / (2 * T)};
  return {std::sqrt(T) / presqueeze, (1 - T) / 2};
}

QuadratureNoise ChannelSettings::p_noise(double T) const {
  LossChannel{T}.validate();
  require(presqueeze > 0, "pre-squeeze factor must be positive");
  if (model == ReceiverModel::calibrated) return {1.0, (1 - T) / (2 * T * presqueeze * presqueeze)};
  return {std::sqrt(T) * presqueeze, (1 - T) / 2};
}

double chsh_value(double E_xx, double E_xp, double E_px, double E_pp) {
  return std::abs(E_pp - E_xx) + std::abs(E_px + E_xp);
}

CorrelatorEngine::ModeDensities CorrelatorEngine::densities(const Grid& grid, const std::vector<ModeBranch>& branches,
                                                            std::size_t terms) {
  ModeDensities d;
  d.x.assign(terms * terms, CVec::Zero(grid.size()));
  d.p.assign(terms * terms, CVec::Zero(grid.size()));
  for (const auto& b : branches) {
    std::vector<CVec> mom;
    for (const auto& v : b.terms) mom.push_back(momentum_samples(Wave(grid, v), grid));
    for (std::size_t s = 0; s < terms; ++s)
      for (std::size_t t = 0; t < terms; ++t) {
        d.x[s * terms + t] += b.weight * b.terms[s].conjugate().cwiseProduct(b.terms[t]);
        d.p[s * terms + t] += b.weight * mom[s].conjugate().cwiseProduct(mom[t]);
      }
  }
  return d;
}

CorrelatorEngine::CorrelatorEngine(const TwoModeEnsemble& ensemble, BellMeasurement measurement)
    : grid_(ensemble.grid),
      terms_(ensemble.term_count()),
      measurement_(std::move(measurement)),
      a_(densities(ensemble.grid, ensemble.mode_a, ensemble.term_count())),
      b_(densities(ensemble.grid, ensemble.mode_b, ensemble.term_count())) {}

CMatrix<double> CorrelatorEngine::reduce(const std::vector<CVec>& dens, const RVec& weights) const {
  const Eigen::Index T = static_cast<Eigen::Index>(terms_);
  CMatrix<double> q(T, T);
  for (Eigen::Index s = 0; s < T; ++s)
    for (Eigen::Index t = 0; t < T; ++t)
      q(s, t) = (dens[static_cast<std::size_t>(s * T + t)].array() * weights.array().cast<Complex>()).sum();
  return q;
}

double CorrelatorEngine::norm(const std::vector<Complex>& coefficients) const {
  const RVec unit = RVec::Constant(grid_.size(), grid_.dx());
  return std::real(contract(coefficients, reduce(a_.x, unit), reduce(b_.x, unit)));
}

CHSHResult CorrelatorEngine::evaluate(double theta, const ChannelSettings& channel) const {
  CHSHResult r = evaluate(subtraction_coefficients(theta), channel);
  r.theta = theta;
  return r;
}

CHSHResult CorrelatorEngine::evaluate(const std::vector<Complex>& coefficients, const ChannelSettings& channel) const {
  require(coefficients.size() == terms_, "coefficient count does not match the ensemble");
  const RVec wxa = integration_weights(measurement_.x_a, grid_, channel.x_noise(channel.transmission_a));
  const RVec wpa = integration_weights(measurement_.p_a, grid_, channel.p_noise(channel.transmission_a));
  const RVec wxb = integration_weights(measurement_.x_b, grid_, channel.x_noise(channel.transmission_b));
  const RVec wpb = integration_weights(measurement_.p_b, grid_, channel.p_noise(channel.transmission_b));
  const CMatrix<double> qxa = reduce(a_.x, wxa), qpa = reduce(a_.p, wpa);
  const CMatrix<double> qxb = reduce(b_.x, wxb), qpb = reduce(b_.p, wpb);
  const double n = norm(coefficients);
  if (!(n > 0)) throw NumericalGuardError("two-mode state has zero norm");
  auto corr = [&](const CMatrix<double>& qa, const CMatrix<double>& qb) {
    return std::real(contract(coefficients, qa, qb)) / n;
  };
  CHSHResult r;
  r.E_xx = corr(qxa, qxb);
  r.E_xp = corr(qxa, qpb);
  r.E_px = corr(qpa, qxb);
  r.E_pp = corr(qpa, qpb);
  r.S = chsh_value(r.E_xx, r.E_xp, r.E_px, r.E_pp);
  r.theta = coefficients.size() == 2 ? std::arg(coefficients[1] / coefficients[0]) : 0.0;
  r.transmission = std::min(channel.transmission_a, channel.transmission_b);
  r.presqueeze = channel.presqueeze;
  return r;
}

std::pair<double, double> CorrelatorEngine::mean_photons(const std::vector<Complex>& coefficients) const {
  const RVec x = grid_.points();
  const RVec unit = RVec::Constant(grid_.size(), grid_.dx());
  const RVec x2 = x.cwiseAbs2() * grid_.dx();
  auto number = [&](const ModeDensities& d) {
    return CMatrix<double>((reduce(d.x, x2) + reduce(d.p, x2) - reduce(d.x, unit)) / 2.0);
  };
  const CMatrix<double> ga = reduce(a_.x, unit), gb = reduce(b_.x, unit);
  const double n = std::real(contract(coefficients, ga, gb));
  return {std::real(contract(coefficients, number(a_), gb)) / n, std::real(contract(coefficients, ga, number(b_))) / n};
}

CHSHResult chsh_direct(const TwoModeEnsemble& ensemble, const BellMeasurement& measurement, double theta,
                       const QuadratureNoise& x_noise, const QuadratureNoise& p_noise) {
  const Grid& g = ensemble.grid;
  const Eigen::Index n = g.size();
  const auto c = subtraction_coefficients(theta);
  require(ensemble.term_count() == 2, "direct evaluation expects a two-term subtraction ensemble");
  const double norm = ensemble.norm_squared();
  auto amplitudes = [&](const std::vector<ModeBranch>& branches, bool momentum) {
    std::vector<std::vector<CVec>> out;
    for (const auto& b : branches) {
      std::vector<CVec> t;
      for (const auto& v : b.terms) t.push_back(momentum ? momentum_samples(Wave(g, v), g) : v);
      out.push_back(std::move(t));
    }
    return out;
  };
  auto correlator = [&](bool pa, bool pb) {
    const auto ua = amplitudes(ensemble.mode_a, pa);
    const auto ub = amplitudes(ensemble.mode_b, pb);
    JointDistribution<double> joint{g, g, Eigen::MatrixXd::Zero(n, n)};
    for (std::size_t ia = 0; ia < ua.size(); ++ia)
      for (std::size_t ib = 0; ib < ub.size(); ++ib) {
        CMatrix<double> left(n, 2), right(n, 2);
        for (Eigen::Index t = 0; t < 2; ++t) {
          left.col(t) = c[static_cast<std::size_t>(t)] * ua[ia][static_cast<std::size_t>(t)];
          right.col(t) = ub[ib][static_cast<std::size_t>(t)];
        }
        const CMatrix<double> amp = left * right.transpose();
        joint.values += ensemble.mode_a[ia].weight * ensemble.mode_b[ib].weight * amp.cwiseAbs2();
      }
    joint.values /= norm;
    const double mass = joint.mass();
    if (std::abs(mass - 1) > 1e-6)
      throw NumericalGuardError("joint quadrature distribution has mass " + std::to_string(mass));
    const auto noisy = apply_noise(joint, pa ? p_noise : x_noise, pb ? p_noise : x_noise);
    const RVec wa = integration_weights(pa ? measurement.p_a : measurement.x_a, g) / g.dx();
    const RVec wb = integration_weights(pb ? measurement.p_b : measurement.x_b, g) / g.dx();
    return wa.dot(noisy.values * wb) * g.dx() * g.dx();
  };
  CHSHResult r;
  r.E_xx = correlator(false, false);
  r.E_xp = correlator(false, true);
  r.E_px = correlator(true, false);
  r.E_pp = correlator(true, true);
  r.S = chsh_value(r.E_xx, r.E_xp, r.E_px, r.E_pp);
  r.theta = theta;
  return r;
}

std::vector<CHSHResult> theta_sweep(const CorrelatorEngine& engine, int points, const ChannelSettings& channel) {
  require(points >= 1, "theta sweep needs at least one point");
  std::vector<CHSHResult> out;
  for (int k = 0; k < points; ++k) out.push_back(engine.evaluate(-kPi + 2 * kPi * k / points, channel));
  return out;
}

CHSHResult loss_point(const CorrelatorEngine& engine, double theta, double T, PresqueezePolicy policy,
                      double envelope_s_prime, ReceiverModel model) {
  auto at = [&](double s) { return engine.evaluate(theta, ChannelSettings::symmetric(T, s, model)); };
  switch (policy) {
    case PresqueezePolicy::unit:
      return at(1.0);
    case PresqueezePolicy::inverse_envelope:
      return at(1.0 / envelope_s_prime);
    case PresqueezePolicy::optimized:
      break;
  }
  if (T == 1.0 && model == ReceiverModel::calibrated) return at(1.0);
  const auto best = optimize::golden_maximize([&](double ls) { return at(std::exp(ls)).S; }, std::log(0.25),
                                              std::log(4.0), 1e-4);
  return at(std::exp(best.x));
}

std::optional<double> crossing_transmission(const CorrelatorEngine& engine, double theta, PresqueezePolicy policy,
                                            double envelope_s_prime, ReceiverModel model, double lo, double tolerance) {
  auto excess = [&](double T) { return loss_point(engine, theta, T, policy, envelope_s_prime, model).S - 2; };
  double hi = 1.0;
  if (excess(hi) <= 0 || excess(lo) > 0) return std::nullopt;
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

LossCurve loss_sweep(const CorrelatorEngine& engine, double theta, const std::vector<double>& transmissions,
                     PresqueezePolicy policy, double envelope_s_prime, ReceiverModel model, bool with_crossing) {
  LossCurve curve;
  curve.policy = policy;
  for (double T : transmissions) curve.points.push_back(loss_point(engine, theta, T, policy, envelope_s_prime, model));
  if (with_crossing) curve.crossing = crossing_transmission(engine, theta, policy, envelope_s_prime, model);
  return curve;
}

BellConfiguration BellConfiguration::strong() { return {}; }

BellConfiguration BellConfiguration::weak() {
  BellConfiguration c;
  c.label = "(3,0)";
  c.p = 3;
  c.p_prime = 0;
  c.envelope = 1.0;
  c.bookkeeping_tolerance = 0.08;
  return c;
}

void BellConfiguration::validate() const {
  require(p_prime >= 0, "comb stage count must be non-negative");
  require(p >= p_prime + 3, "cat stages must exceed comb stages by at least 3 (modulation cats need one stage)");
  require(modulation_nodes >= 1, "modulation herald needs at least one node");
  require(modulation_width >= 0, "modulation window width must be non-negative");
  require(!envelope || *envelope > 0, "envelope factor must be positive");
  require(bookkeeping_tolerance > 0, "bookkeeping tolerance must be positive");
  subtraction.validate();
}

BellSources prepare_sources(const BellConfiguration& cfg, const Grid& grid) {
  cfg.validate();
  const double dx = grid.dx();
  const double native = 1 / kSqrt2;
  const double target = cfg.envelope.value_or(native);
  const double t = target / native;
  auto rotated = [](const Kernel& k) { return k.transformed([](const Wave& w) { return rotate_quarter(w); }); };
  auto envelope = [&](const Kernel& k) { return t == 1.0 ? k : squeeze(k, t); };

  BellSources s{Kernel(fock(1, grid)), Kernel(fock(1, grid)), ResourceLedger::single_photon(),
                ResourceLedger::single_photon(), {}, 0.0, 0.0, target};
  CombParams comb;
  comb.bit = LogicalBit::one;
  comb.s_prime = target;
  if (cfg.p_prime >= 1) {
    const auto cat = breed_cat(BreedingPlan::cat(cfg.p, cfg.cat_schedule, dx), grid);
    s.alpha = std::sqrt(std::pow(2.0, cfg.p));
    const double a0 = comb_seed_spacing(s.alpha, native);
    const auto plan = BreedingPlan::comb(cfg.p_prime, a0, cfg.comb_schedule, dx, LogicalBit::one);
    const auto bred = breed_comb(plan, BreedResult{rotated(cat.state), cat.ledger}, grid);
    s.comb = envelope(bred.state);
    s.comb_ledger = bred.ledger;
    comb.a = plan.final_spacing() / t;
    comb.s = a0 / kPi / t;
  } else {
    const int n = (1 << cfg.p) - 1;
    const auto cat = breed_n(n, cfg.cat_schedule, grid);
    s.alpha = std::sqrt(static_cast<double>(n));
    s.comb = envelope(rotated(cat.state));
    s.comb_ledger = cat.ledger;
    comb.a = comb_seed_spacing(s.alpha, target);
    comb.s = comb.a / kPi;
  }
  s.comb_params = comb;

  const int q = cfg.p - cfg.p_prime - 2;
  const auto mod = breed_cat(BreedingPlan::cat(q, cfg.cat_schedule, dx), grid);
  s.modulation_cat = envelope(rotated(mod.state));
  s.cat_ledger = mod.ledger;
  s.alpha_prime = std::sqrt(std::pow(2.0, q));
  return s;
}

PipelineLedger compose_pipeline_ledger(const ResourceLedger& cat, const ResourceLedger& comb,
                                       double subtraction_probability, double modulation_probability) {
  require(subtraction_probability > 0 && subtraction_probability <= 1, "subtraction probability must lie in (0, 1]");
  require(modulation_probability > 0 && modulation_probability <= 1 + 1e-9,
          "modulation probability must lie in (0, 1]");
  const double subtracted = 2 * cat.expected_resources() / subtraction_probability;
  PipelineLedger l;
  l.expected_resources = (subtracted + 2 * comb.expected_resources()) / std::min(1.0, modulation_probability);
  l.minimal_resources = 2 * cat.minimal_resources() + 2 * comb.minimal_resources();
  return l;
}

BellResource assemble(const BellSources& sources, const BellConfiguration& cfg) {
  return assemble_with(sources, cfg, std::nullopt);
}

BellResource build_bell_resource(const BellConfiguration& cfg, const Grid& grid) {
  return assemble(prepare_sources(cfg, grid), cfg);
}

std::vector<PipelinePoint> pipeline_success(const BellSources& sources, const BellConfiguration& cfg,
                                            const std::vector<double>& modulation_widths) {
  std::optional<std::pair<Wave, Wave>> refs;
  if (cfg.reference == BinningReference::generated) {
    BellConfiguration tight = cfg;
    tight.modulation_width = 0.0;
    const auto sub =
        delocalized_subtract(sources.modulation_cat, sources.modulation_cat, cfg.subtraction, sources.s_prime);
    const double dx = sources.comb.grid().dx();
    const auto mod = modulation_stage(sub.state, sources.comb, HeraldWindow::tight(dx), HeraldWindow::tight(dx));
    refs = generated_references(mod.state);
  }
  std::vector<PipelinePoint> out;
  for (double w : modulation_widths) {
    BellConfiguration c = cfg;
    c.modulation_width = w;
    const auto r = assemble_with(sources, c, refs);
    const CorrelatorEngine engine(r.state, r.measurement);
    out.push_back({w, engine.evaluate(cfg.subtraction.theta).S, r.ledger.p_succ(), r.modulation_probability});
  }
  return out;
}

}  // namespace cvbell
