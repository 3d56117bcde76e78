#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvbell/breeding.hpp"

using namespace cvbell;

namespace {

const Grid kGrid(12.0, 1024);

// N psi_1^n(x / sqrt n) sampled directly from the Fock-1 wavefunction.
Wave power_oracle(int n, const Grid& g) {
  CVector<double> v(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double y = g.x(i) / std::sqrt(double(n));
    v[i] = std::pow(std::numbers::sqrt2 * std::pow(std::numbers::pi, -0.25) * y * std::exp(-y * y / 2), n);
  }
  return normalize(Wave(g, v));
}

double aligned_distance(const Wave& psi, const Wave& ref) {
  const auto phase = std::polar(1.0, -std::arg(inner(ref, psi)));
  return l2_distance(Wave(psi.grid(), normalize(psi).amplitudes() * phase), ref);
}

}  // namespace

TEST_CASE("tight breeding reaches the closed-form limit") {
  for (int p = 1; p <= 3; ++p) {
    const auto r = breed_cat(BreedingPlan::cat(p, Schedule::tight(), kGrid.dx()), kGrid);
    CHECK(r.state.rank() == 1);
    CHECK(aligned_distance(r.state.dominant(), power_oracle(1 << p, kGrid)) < 1e-4);
    CHECK(aligned_distance(breeding_limit(1 << p, kGrid), power_oracle(1 << p, kGrid)) < 1e-10);
    CHECK(parity_overlap(r.state) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(r.ledger.minimal_resources() == (1 << p));
  }
}

TEST_CASE("binary breeding follows the bits of n") {
  const auto one = breed_n(1, Schedule::tight(), kGrid);
  CHECK(one.ledger.p_succ() == 1.0);
  CHECK(fidelity(one.state, fock(1, kGrid)) == doctest::Approx(1.0));
  const auto seven = breed_n(7, Schedule::tight(), kGrid);
  CHECK(parity_overlap(seven.state) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(fidelity(seven.state, power_oracle(7, kGrid)) > 0.9999);
  CHECK(seven.ledger.minimal_resources() == 7);
  CHECK(parity_overlap(breed_n(6, Schedule::tight(), kGrid).state) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("schedules") {
  const Schedule s = Schedule::geometric(0.4);
  CHECK(s.width(0) == doctest::Approx(0.4));
  CHECK(s.width(1) == doctest::Approx(0.52));
  CHECK(s.width(2) / s.width(1) == doctest::Approx(1.3));
  const auto plan = BreedingPlan::cat(3, s, kGrid.dx());
  CHECK(plan.stages.size() == 3);
  CHECK(plan.target_n == 8);
  CHECK(BreedingPlan::cat(2, Schedule::tight(), kGrid.dx()).stages.front().is_tight(kGrid.dx()));
}

TEST_CASE("ledger recursion") {
  const auto unit = ResourceLedger::single_photon();
  ResourceLedger l = unit;
  for (int k = 0; k < 4; ++k) l = ResourceLedger::merge(l, l, 1.0);
  CHECK(l.expected_resources() == doctest::Approx(16.0));
  CHECK(l.minimal_resources() == 16);
  CHECK(l.p_succ() == doctest::Approx(1.0));
  const auto half = ResourceLedger::merge(unit, unit, 0.5);
  CHECK(half.expected_resources() == doctest::Approx(4.0));
  CHECK(half.p_succ() == doctest::Approx(0.5));
  const auto r = breed_cat(BreedingPlan::cat(2, Schedule::geometric(0.6), kGrid.dx()), kGrid);
  double c = 1;
  for (double p : r.ledger.stage_probabilities()) c = 2 * c / p;
  CHECK(r.ledger.expected_resources() == doctest::Approx(c));
}

TEST_CASE("fidelity and success trade off monotonically") {
  for (int p = 1; p <= 3; ++p) {
    double last_f = 2, last_p = 0;
    for (double w : {0.2, 0.5, 0.9, 1.3}) {
      const auto r = breed_cat(BreedingPlan::cat(p, Schedule::geometric(w), kGrid.dx()), kGrid);
      const double f = fit_nearest_scs(r.state, std::pow(2.0, p)).fidelity;
      CHECK(f <= last_f + 1e-9);
      CHECK(r.ledger.p_succ() >= last_p);
      last_f = f;
      last_p = r.ledger.p_succ();
    }
  }
}

TEST_CASE("cat fit recovers known parameters") {
  const CatParams truth{Parity::even, 2.0, 1.2, CatFrame::position};
  const auto fit = fit_nearest_scs(Kernel(squeezed_cat(truth, kGrid)), 4.0);
  CHECK(fit.fidelity == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit.cat->alpha == doctest::Approx(2.0).epsilon(1e-4));
  CHECK(fit.cat->s_prime == doctest::Approx(1.2).epsilon(1e-4));
  const auto p2 = fit_nearest_scs(breed_cat(BreedingPlan::cat(2, Schedule::tight(), kGrid.dx()), kGrid).state, 4.0);
  CHECK(p2.cat->alpha == doctest::Approx(2.0).epsilon(0.10));
  CHECK(p2.cat->s_prime == doctest::Approx(std::numbers::sqrt2).epsilon(0.15));
}

TEST_CASE("vacuum fit against a parameter-grid scan") {
  const Wave vac = vacuum(kGrid);
  const auto fit = fit_nearest_scs(Kernel(vac));
  double best = 0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      const double alpha = 0.02 + 1.5 * i / 49, sp = 0.8 + 1.2 * j / 49;
      best = std::max(best, fidelity(squeezed_cat(CatParams{Parity::even, alpha, sp, CatFrame::position}, kGrid), vac));
    }
  CHECK(std::abs(fit.fidelity - best) < 1e-3);
}

TEST_CASE("comb breeding") {
  const double sp = 1 / std::numbers::sqrt2, alpha = std::sqrt(32.0);
  const double a0 = comb_seed_spacing(alpha, sp);
  CHECK(a0 == doctest::Approx(std::numbers::pi / (std::numbers::sqrt2 * sp * alpha)));
  const Kernel cat(squeezed_cat(CatParams{Parity::even, alpha, sp}, kGrid));
  const BreedResult input{cat, ResourceLedger::single_photon()};

  const auto plan1 = BreedingPlan::comb(1, a0, Schedule::tight(), kGrid.dx());
  CHECK(plan1.final_spacing() == doctest::Approx(a0 * std::numbers::sqrt2));
  const auto r1 = breed_comb(plan1, input, kGrid);
  const CombParams seed{LogicalBit::zero, plan1.final_spacing(), a0 / std::numbers::pi, sp};
  const auto fit1 = fit_nearest_comb(r1.state, seed);
  CHECK(fit1.fidelity > 0.99);

  // dense scan of (a, s, s') around the seed
  double best = 0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      for (int k = 0; k < 9; ++k) {
        const CombParams c{LogicalBit::zero, fit1.comb->a * (0.99 + 0.0025 * i), fit1.comb->s * (0.9 + 0.025 * j),
                           fit1.comb->s_prime * (0.96 + 0.01 * k)};
        best = std::max(best, fidelity(r1.state, comb(c, kGrid)));
      }
  CHECK(std::abs(fit1.fidelity - best) < 1e-3);
  CHECK(fit1.fidelity >= best - 1e-9);

  const auto plan2 = BreedingPlan::comb(2, a0, Schedule::tight(), kGrid.dx());
  const auto fit2 = fit_nearest_comb(breed_comb(plan2, input, kGrid).state,
                                     CombParams{LogicalBit::zero, plan2.final_spacing(), a0 / std::numbers::pi, sp});
  CHECK(fit2.comb->a == doctest::Approx(2 * a0).epsilon(0.02));

  const double w = 0.3;
  const auto periodic = breed_comb(BreedingPlan::comb(1, a0, Schedule::geometric(w, 1.3, 5), kGrid.dx()), input, kGrid);
  const auto single = herald_mix(cat, cat, HeraldWindow::single(0.0, w));
  CHECK(periodic.ledger.stage_probabilities().front() >= single.probability);
}

TEST_CASE("comb fit flags a violated condition") {
  const CombParams wide{LogicalBit::zero, 0.5, 0.3, 0.4};
  const Grid g(24.0, 4096);
  const auto fit = fit_nearest_comb(Kernel(comb(wide, g)), wide);
  CHECK_FALSE(fit.condition_holds);
  const CombParams ok{LogicalBit::zero, 1.0, 0.1, 0.3};
  const auto self = fit_nearest_comb(Kernel(comb(ok, g)), CombParams{LogicalBit::zero, 1.05, 0.11, 0.28});
  CHECK(self.fidelity == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(self.comb->a == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(self.comb->s == doctest::Approx(0.1).epsilon(1e-3));
  CHECK(self.comb->s_prime == doctest::Approx(0.3).epsilon(1e-3));
  CHECK(self.condition_holds);
}

TEST_CASE("schedule optimizer") {
  // p = 1: a single width, compared with a fine 1-D scan
  const double target = 0.99;
  const auto opt = optimize_schedule(PlanKind::cat, 1, target, kGrid);
  CHECK(opt.fidelity >= target - 1e-9);
  double best = 0;
  for (int i = 1; i <= 400; ++i) {
    const double w = 0.005 * i;
    const auto r = breed_cat(BreedingPlan::cat(1, Schedule::geometric(w), kGrid.dx()), kGrid);
    if (fit_nearest_scs(r.state, 2.0).fidelity >= target) best = std::max(best, r.ledger.p_succ());
  }
  CHECK(opt.p_succ == doctest::Approx(best).epsilon(0.02));

  const auto p3 = optimize_schedule(PlanKind::cat, 3, 0.97, kGrid);
  CHECK(p3.p_succ >= p3.rule_p_succ - 1e-6);
  CHECK(p3.fidelity >= 0.97 - 1e-9);

  CHECK_THROWS_AS(optimize_schedule(PlanKind::cat, 2, 0.999999, kGrid), PreconditionError);
  CHECK_THROWS_AS(optimize_schedule(PlanKind::cat, 7, 0.9, kGrid), PreconditionError);
}
