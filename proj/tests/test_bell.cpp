#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvbell/bell.hpp"

using namespace cvbell;

namespace {

constexpr double kTheta = -std::numbers::pi / 4;

const Grid& small_grid() {
  static const Grid g(16.0, 512);
  return g;
}

// Even and odd unsqueezed cats, and the subtracted pair built from them.
struct CatPair {
  Wave even, odd;
};

CatPair cats(const Grid& g) {
  return {squeezed_cat(CatParams{Parity::even, 1.6, 1.0, CatFrame::position}, g),
          squeezed_cat(CatParams{Parity::odd, 1.6, 1.0, CatFrame::position}, g)};
}

const BellResource& weak_resource() {
  static const BellResource r = build_bell_resource(BellConfiguration::weak(), Grid(20.0, 2048));
  return r;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

TEST_CASE("product-sum algebra") {
  const auto [e, o] = cats(small_grid());
  const ProductSumState s({{Complex(1.0), e, o}, {Complex(0, 1), o, e}});
  CHECK(s.norm_squared() == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(s.normalized().norm_squared() == doctest::Approx(1.0));
  CHECK(std::abs(inner(s, s) - Complex(s.norm_squared())) < 1e-12);
  const ProductSumState t({{Complex(1.0), e, o}});
  CHECK(fidelity(s, t) == doctest::Approx(0.5).epsilon(1e-10));
  const auto ens = TwoModeEnsemble::from_state(s);
  CHECK(ens.term_count() == 2);
  CHECK(ens.norm_squared() == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("delocalized subtraction") {
  const auto [e, o] = cats(small_grid());
  const SubtractionConfig cfg;
  const auto coeffs = subtraction_coefficients(kTheta);
  CHECK(std::abs(coeffs[0] - 1.0) < 1e-15);
  CHECK(std::abs(coeffs[1] - std::polar(1.0, kTheta)) < 1e-15);

  const auto sub = delocalized_subtract(e, e, cfg);
  const Wave ae(small_grid(), apply_annihilation(e));
  const ProductSumState oracle({{coeffs[0], ae, e}, {coeffs[1], e, ae}});
  CHECK(fidelity(sub.state, oracle) == doctest::Approx(1.0).epsilon(1e-12));
  // a maps the even cat onto the odd one, so the ideal output is |o e> + e^{i theta} |e o>
  const ProductSumState ideal({{coeffs[0], o, e}, {coeffs[1], e, o}});
  CHECK(fidelity(sub.state, ideal) > 0.999);

  const Wave f4 = fock(4, small_grid());
  CHECK(delocalized_subtract(f4, f4, cfg).probability == doctest::Approx(4.8e-4).epsilon(1e-9));
  SubtractionConfig unit = cfg;
  unit.R = unit.eta_apd = 1.0;
  CHECK(delocalized_subtract(f4, f4, unit).probability == 1.0);
  CHECK_THROWS_AS(delocalized_subtract(vacuum(small_grid()), vacuum(small_grid()), cfg), PreconditionError);
  SubtractionConfig bad = cfg;
  bad.R = 0;
  CHECK_THROWS_AS(bad.validate(), PreconditionError);

  // mixed-input route agrees with the pure route
  const auto mixed = delocalized_subtract(Kernel(e), Kernel(e), cfg);
  CHECK(fidelity(mixed.state.branch_state(0, 0), sub.state) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(mixed.probability == doctest::Approx(sub.probability).epsilon(1e-10));
}

TEST_CASE("sign functions and integration weights") {
  const SignFunction eps{-1.0, {-0.5, 1.2}};
  CHECK(eps(-1.0) == -1.0);
  CHECK(eps(0.0) == 1.0);
  CHECK(eps(2.0) == -1.0);
  const SignFunction m = eps.mirrored();
  for (double x : {-2.0, -0.7, 0.3, 1.0, 3.0}) CHECK(m(x) == eps(-x));

  // Gaussian density: E[eps(scale x + noise)] in closed form
  const Grid& g = small_grid();
  const double mu = 0.3, sigma = 0.8;
  RVec rho(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i)
    rho[i] = std::exp(-std::pow(g.x(i) - mu, 2) / (2 * sigma * sigma)) / (std::sqrt(2 * std::numbers::pi) * sigma);
  for (const QuadratureNoise noise : {QuadratureNoise{}, QuadratureNoise{0.8, 0.2}, QuadratureNoise{1.3, 0.05}}) {
    const double m0 = noise.scale * mu, sd = std::sqrt(std::pow(noise.scale * sigma, 2) + noise.variance);
    const double a = normal_cdf((-0.5 - m0) / sd), b = normal_cdf((1.2 - m0) / sd);
    const double expected = -a + (b - a) - (1 - b);
    CHECK(integration_weights(eps, g, noise).dot(rho) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("sign binning parity rules") {
  const auto [e, o] = cats(small_grid());
  const auto b = sign_binning(e, o);
  CHECK(b.p_parity_ok);
  CHECK(b.max_imaginary_residue < 1e-10);
  // x binning of an even-odd pair is odd
  for (double x : {0.4, 1.1, 2.5}) CHECK(b.x(x) == -b.x(-x));
  CHECK_FALSE(sign_binning(e, o, PhaseReference::edge).p_parity_ok);
  CHECK_THROWS_AS(sign_binning(Wave(small_grid(), e.amplitudes() * Complex(0, 1)), o), PreconditionError);
}

TEST_CASE("engine matches the direct two-mode evaluation") {
  const auto [e, o] = cats(small_grid());
  const auto sub = delocalized_subtract(Kernel(e), Kernel(e), SubtractionConfig{});
  const auto meas = BellMeasurement::from_binning(sign_binning(o, e));
  const CorrelatorEngine engine(sub.state, meas);
  for (double theta : {kTheta, 0.4}) {
    const auto a = engine.evaluate(theta);
    const auto d = chsh_direct(sub.state, meas, theta);
    CHECK(std::abs(a.E_xx - d.E_xx) < 1e-8);
    CHECK(std::abs(a.E_xp - d.E_xp) < 1e-8);
    CHECK(std::abs(a.E_px - d.E_px) < 1e-8);
    CHECK(std::abs(a.E_pp - d.E_pp) < 1e-8);
  }
  const auto ch = ChannelSettings::symmetric(0.8, 1.2);
  const auto a = engine.evaluate(kTheta, ch);
  const auto d = chsh_direct(sub.state, meas, kTheta, ch.x_noise(0.8), ch.p_noise(0.8));
  CHECK(std::abs(a.S - d.S) < 1e-8);
}

TEST_CASE("correlator bounds") {
  const auto& r = weak_resource();
  const CorrelatorEngine engine(r.state, r.measurement);
  for (const auto& pt : theta_sweep(engine, 16)) {
    for (double v : {pt.E_xx, pt.E_xp, pt.E_px, pt.E_pp}) CHECK(std::abs(v) <= 1.0);
    CHECK(pt.S <= 2 * std::numbers::sqrt2 + 1e-6);
  }
  // local product state
  const auto [e, o] = cats(small_grid());
  const auto product = TwoModeEnsemble::from_state(ProductSumState({{Complex(1.0), e, o}}));
  const CorrelatorEngine local(product, BellMeasurement::from_binning(sign_binning(e, o)));
  CHECK(local.evaluate(std::vector<Complex>{Complex(1.0)}).S <= 2 + 1e-6);
}

TEST_CASE("weak configuration violates the bound") {
  const auto& r = weak_resource();
  const CorrelatorEngine engine(r.state, r.measurement);
  const auto s = engine.evaluate(kTheta);
  CHECK(s.S > 2.0);
  CHECK(r.binning.p_parity_ok);
  CHECK(r.subtraction_probability > 0);
  CHECK(r.modulation_probability > 0);
  CHECK(r.nbar_a == doctest::Approx(r.nbar_b).epsilon(1e-6));
  const auto [na, nb] = engine.mean_photons(subtraction_coefficients(kTheta));
  CHECK(na == doctest::Approx(r.nbar_a).epsilon(1e-6));
  // the ensemble carries the modulation herald probability in its norm
  CHECK(engine.norm(subtraction_coefficients(kTheta)) == doctest::Approx(r.modulation_probability).epsilon(1e-8));
}

TEST_CASE("grid doubling leaves S unchanged") {
  const auto coarse = weak_resource();
  const auto fine = build_bell_resource(BellConfiguration::weak(), Grid(20.0, 4096));
  const double s1 = CorrelatorEngine(coarse.state, coarse.measurement).evaluate(kTheta).S;
  const double s2 = CorrelatorEngine(fine.state, fine.measurement).evaluate(kTheta).S;
  CHECK(std::abs(s1 - s2) < 1e-4);
}

TEST_CASE("loss lowers S monotonically") {
  const auto& r = weak_resource();
  const CorrelatorEngine engine(r.state, r.measurement);
  double last = 1e9;
  for (double T : {1.0, 0.95, 0.9, 0.8, 0.6, 0.4}) {
    const double s = loss_point(engine, kTheta, T, PresqueezePolicy::unit, 1.0).S;
    CHECK(s < last);
    last = s;
    CHECK(loss_point(engine, kTheta, T, PresqueezePolicy::optimized, 1.0).S >= s - 1e-9);
  }
  const auto crossing = crossing_transmission(engine, kTheta, PresqueezePolicy::optimized, 1.0);
  REQUIRE(crossing);
  CHECK(loss_point(engine, kTheta, *crossing + 0.01, PresqueezePolicy::optimized, 1.0).S > 2);
  CHECK(loss_point(engine, kTheta, *crossing - 0.01, PresqueezePolicy::optimized, 1.0).S < 2);
  const double phys = loss_point(engine, kTheta, 1.0, PresqueezePolicy::unit, 1.0, ReceiverModel::physical).S;
  CHECK(phys == doctest::Approx(engine.evaluate(kTheta).S).epsilon(1e-12));
}

TEST_CASE("mixed branches are an ensemble average") {
  const auto& r = weak_resource();
  const auto compressed = compress_branches(r.state, 1e-13, 2);
  const double s0 = CorrelatorEngine(r.state, r.measurement).evaluate(kTheta).S;
  const double s1 = CorrelatorEngine(compress_branches(r.state), r.measurement).evaluate(kTheta).S;
  CHECK(s1 == doctest::Approx(s0).epsilon(1e-10));
  CHECK(compressed.mode_a.size() <= 2);

  // a mode-A mixture evaluates to the weighted average of its pure parts
  const auto [e, o] = cats(small_grid());
  const Wave e2 = squeezed_cat(CatParams{Parity::even, 1.3, 1.0, CatFrame::position}, small_grid());
  const auto meas = BellMeasurement::from_binning(sign_binning(e, o));
  const std::vector<Complex> one{Complex(1.0)};
  auto pure = [&](const Wave& a) {
    return CorrelatorEngine(TwoModeEnsemble::from_state(ProductSumState({{Complex(1.0), a, o}})), meas).evaluate(one);
  };
  TwoModeEnsemble mix{small_grid(), one, {{0.3, {e.amplitudes()}}, {0.7, {e2.amplitudes()}}}, {{1.0, {o.amplitudes()}}}};
  const auto m = CorrelatorEngine(mix, meas).evaluate(one);
  const auto pa = pure(e), pb = pure(e2);
  CHECK(m.E_xx == doctest::Approx(0.3 * pa.E_xx + 0.7 * pb.E_xx).epsilon(1e-10));
  CHECK(m.E_pp == doctest::Approx(0.3 * pa.E_pp + 0.7 * pb.E_pp).epsilon(1e-10));
}

TEST_CASE("pipeline ledger composition") {
  ResourceLedger cat = ResourceLedger::single_photon(), comb = ResourceLedger::single_photon();
  for (int k = 0; k < 2; ++k) cat = ResourceLedger::merge(cat, cat, 1.0);
  for (int k = 0; k < 3; ++k) comb = ResourceLedger::merge(comb, comb, 1.0);
  const auto pure = compose_pipeline_ledger(cat, comb, 1.0, 1.0);
  CHECK(pure.expected_resources == doctest::Approx(2 * 4 + 2 * 8));
  CHECK(pure.minimal_resources == 24);
  CHECK(pure.p_succ() == doctest::Approx(1.0));
  const auto lossy = compose_pipeline_ledger(cat, comb, 0.5, 0.25);
  CHECK(lossy.expected_resources == doctest::Approx((2 * 4 / 0.5 + 16) / 0.25));
  CHECK_THROWS_AS(compose_pipeline_ledger(cat, comb, 0.0, 1.0), PreconditionError);
}

TEST_CASE("full-axis modulation with unit tap-off reduces to the breeding ledger") {
  BellConfiguration cfg = BellConfiguration::weak();
  cfg.subtraction.R = cfg.subtraction.eta_apd = 1.0;
  const Grid g(20.0, 2048);
  const auto sources = prepare_sources(cfg, g);
  const auto sub = delocalized_subtract(sources.modulation_cat, sources.modulation_cat, cfg.subtraction, sources.s_prime);
  CHECK(sub.probability == 1.0);
  const auto whole = HeraldWindow::single(0.0, 4 * g.x_max(), 40);
  const auto mod = modulation_stage(sub.state, sources.comb, whole, whole);
  CHECK(mod.probability == doctest::Approx(1.0).epsilon(1e-6));
  const auto l = compose_pipeline_ledger(sources.cat_ledger, sources.comb_ledger, sub.probability, mod.probability);
  CHECK(l.expected_resources ==
        doctest::Approx(2 * sources.cat_ledger.expected_resources() + 2 * sources.comb_ledger.expected_resources())
            .epsilon(1e-6));
}

TEST_CASE("modulation bookkeeping guard") {
  ModulationBookkeeping ok{2.0 * std::sqrt(2.0), std::sqrt(2.0), 1.0, std::numbers::pi / 4, 0};
  ok.a = std::numbers::pi / (2 * std::numbers::sqrt2) / (ok.s_prime * ok.alpha_prime);
  CHECK_NOTHROW(ok.check());
  ModulationBookkeeping off = ok;
  off.a *= 1.2;
  CHECK_THROWS_AS(off.check(), PreconditionError);
  off = ok;
  off.alpha *= 0.8;
  CHECK_THROWS_AS(off.check(), PreconditionError);
}

TEST_CASE("configuration guards") {
  BellConfiguration cfg;
  cfg.p = 4;
  cfg.p_prime = 2;
  CHECK_THROWS_AS(cfg.validate(), PreconditionError);
  CHECK_NOTHROW(BellConfiguration::strong().validate());
  CHECK_NOTHROW(BellConfiguration::weak().validate());
}

TEST_CASE("pipeline success trade-off") {
  const Grid g = default_bell_grid();
  const std::vector<double> widths{0.0, 0.1, 0.2, 0.4};
  const auto weak = pipeline_success(prepare_sources(BellConfiguration::weak(), g), BellConfiguration::weak(), widths);
  const auto strong =
      pipeline_success(prepare_sources(BellConfiguration::strong(), g), BellConfiguration::strong(), widths);
  for (std::size_t i = 1; i < widths.size(); ++i) {
    CHECK(weak[i].S < weak[i - 1].S);
    CHECK(weak[i].p_succ > weak[i - 1].p_succ);
  }
  for (std::size_t i = 0; i < widths.size(); ++i) CHECK(strong[i].S > weak[i].S);
}

TEST_CASE("binning with mismatched references loses violation") {
  const Grid g = default_bell_grid();
  const auto strong = build_bell_resource(BellConfiguration::strong(), g);
  const auto weak = build_bell_resource(BellConfiguration::weak(), g);
  const double native = CorrelatorEngine(strong.state, strong.measurement).evaluate(kTheta).S;
  const double crossed = CorrelatorEngine(strong.state, weak.measurement).evaluate(kTheta).S;
  CHECK(native - crossed > 0.1);
}
