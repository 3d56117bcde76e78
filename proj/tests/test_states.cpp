#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "cvbell/states.hpp"

using namespace cvbell;

namespace {

const Grid kGrid(12.0, 1024);

double overlap_error(const Wave& psi, const std::function<double(double)>& ref) {
  CVector<double> v(psi.grid().size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = ref(psi.grid().x(i));
  return 1 - fidelity(psi, Wave(psi.grid(), v));
}

}  // namespace

TEST_CASE("rotated-frame cats follow the envelope formula") {
  const double alpha = 2.0, sp = 0.7, k = sp * std::numbers::sqrt2 * alpha;
  const Wave even = squeezed_cat(CatParams{Parity::even, alpha, sp}, kGrid);
  const Wave odd = squeezed_cat(CatParams{Parity::odd, alpha, sp}, kGrid);
  CHECK(overlap_error(even, [&](double x) { return std::exp(-sp * sp * x * x / 2) * std::cos(k * x); }) < 1e-13);
  CHECK(overlap_error(odd, [&](double x) { return std::exp(-sp * sp * x * x / 2) * std::sin(k * x); }) < 1e-13);
  CHECK(even.norm_squared() == doctest::Approx(1.0));
  CHECK(parity_overlap(even) == doctest::Approx(1.0));
  CHECK(parity_overlap(odd) == doctest::Approx(-1.0));
}

TEST_CASE("position and rotated frames are related by a quarter turn") {
  for (Parity parity : {Parity::even, Parity::odd}) {
    const double alpha = 1.8, sp = 1.3;
    const Wave pos = squeezed_cat(CatParams{parity, alpha, sp, CatFrame::position}, kGrid);
    const Wave rot = squeezed_cat(CatParams{parity, alpha, 1 / sp, CatFrame::rotated}, kGrid);
    CHECK(fidelity(rotate_quarter(pos), rot) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("unsqueezed cat photon number") {
  // even cat of coherent amplitude alpha: n = alpha^2 tanh(alpha^2)
  const double alpha = 1.5;
  const Wave cat = squeezed_cat(CatParams{Parity::even, alpha, 1.0, CatFrame::position}, kGrid);
  CHECK(mean_photon(cat) == doctest::Approx(alpha * alpha * std::tanh(alpha * alpha)).epsilon(1e-9));
  const Wave odd = squeezed_cat(CatParams{Parity::odd, alpha, 1.0, CatFrame::position}, kGrid);
  CHECK(mean_photon(odd) == doctest::Approx(alpha * alpha / std::tanh(alpha * alpha)).epsilon(1e-9));
}

TEST_CASE("comb logical states") {
  const Grid fine(24.0, 8192);
  const CombParams zero{LogicalBit::zero, 1.0, 0.05, 0.3};
  CombParams one = zero;
  one.bit = LogicalBit::one;
  const Wave c0 = comb(zero, fine), c1 = comb(one, fine);
  CHECK(std::abs(inner(c0, c1)) < 1e-9);
  CHECK(parity_overlap(c0) == doctest::Approx(1.0));
  CHECK(parity_overlap(c1) == doctest::Approx(1.0));
  auto train = [&](double x, double shift) {
    double sum = 0;
    for (int k = -40; k <= 40; ++k) sum += std::exp(-std::pow(x - (k + shift) * zero.a, 2) / (2 * zero.s * zero.s));
    return std::exp(-zero.s_prime * zero.s_prime * x * x / 2) * sum;
  };
  CHECK(overlap_error(c0, [&](double x) { return train(x, 0.0); }) < 1e-12);
  CHECK(overlap_error(c1, [&](double x) { return train(x, 0.5); }) < 1e-12);
  CHECK(zero.condition_holds());
  CHECK_FALSE((CombParams{LogicalBit::zero, 1.0, 0.5, 0.1}).condition_holds());
  CHECK_THROWS_AS(comb(zero, kGrid), PreconditionError);
}

TEST_CASE("f and g references") {
  const Grid fine(32.0, 8192);
  const CombParams c{LogicalBit::zero, 1.0, 0.12, 0.25};
  const FGParams p = FGParams::from_comb(c);
  CHECK(p.a_bar == doctest::Approx(std::numbers::sqrt2));
  const Wave f = fg_reference(p, FGKind::f, fine), g = fg_reference(p, FGKind::g, fine);
  CHECK(parity_overlap(f) == doctest::Approx(1.0));
  CHECK(parity_overlap(g) == doctest::Approx(-1.0));
  const double k = std::numbers::pi / (2 * p.a_bar);
  auto base = [&](double x) {
    double sum = 0;
    for (int j = -40; j <= 40; ++j) sum += std::exp(-std::pow(x - (j + 0.5) * p.a_bar, 2) / (2 * p.s_bar * p.s_bar));
    return std::exp(-p.s_prime * p.s_prime * x * x / 2) * sum;
  };
  CHECK(overlap_error(f, [&](double x) { return base(x) * std::cos(k * x); }) < 1e-12);
  CHECK(overlap_error(g, [&](double x) { return base(x) * std::sin(k * x); }) < 1e-12);
  CHECK(std::abs(inner(f, g)) < 1e-12);
}

TEST_CASE("invalid parameters") {
  CHECK_THROWS_AS(squeezed_cat(CatParams{Parity::even, -1.0, 1.0}, kGrid), PreconditionError);
  CHECK_THROWS_AS(comb(CombParams{LogicalBit::zero, 1.0, 0.0, 0.1}, kGrid), PreconditionError);
  CHECK_THROWS_AS(fock(-1, kGrid), PreconditionError);
}
