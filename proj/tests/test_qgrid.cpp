#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cvbell/states.hpp"

using namespace cvbell;

namespace {

const Grid kGrid(12.0, 1024);

double hermite(int n, double x) {
  double h0 = 1, h1 = 2 * x;
  if (n == 0) return h0;
  for (int k = 1; k < n; ++k) {
    const double h2 = 2 * x * h1 - 2 * k * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

}  // namespace

TEST_CASE("grid geometry") {
  CHECK(kGrid.size() == 1024);
  CHECK(kGrid.x(0) == doctest::Approx(-12.0));
  CHECK(kGrid.x(512) == doctest::Approx(0.0));
  CHECK(kGrid.conjugate().dx() * kGrid.dx() * 1024 == doctest::Approx(2 * std::numbers::pi));
  CHECK_THROWS_AS(Grid(12.0, 1000), PreconditionError);
}

TEST_CASE("fock states match closed-form Hermite functions") {
  for (int n : {0, 1, 3, 6}) {
    const Wave psi = fock(n, kGrid);
    double worst = 0;
    for (Eigen::Index i = 0; i < kGrid.size(); ++i) {
      const double x = kGrid.x(i);
      const double ref = std::pow(std::numbers::pi, -0.25) / std::sqrt(std::pow(2.0, n) * factorial(n)) *
                         hermite(n, x) * std::exp(-x * x / 2);
      worst = std::max(worst, std::abs(psi[i] - ref));
    }
    CHECK(worst < 1e-12);
    CHECK(psi.norm_squared() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mean_photon(psi) == doctest::Approx(n).epsilon(1e-9));
  }
  CHECK(std::abs(inner(fock(2, kGrid), fock(4, kGrid))) < 1e-13);
  CHECK_THROWS_AS(fock(1, Grid(12.0, 64)), PreconditionError);
}

TEST_CASE("Parseval on the conjugate grid") {
  const Wave cases[] = {fock(5, kGrid), squeezed_cat(CatParams{Parity::odd, 2.0, 0.8}, kGrid),
                        squeezed_cat(CatParams{Parity::even, 3.0, 1.4, CatFrame::position}, kGrid)};
  for (const Wave& psi : cases) CHECK(std::abs(to_momentum(psi).norm_squared() - psi.norm_squared()) < 1e-8);
}

TEST_CASE("Gaussian transforms to the analytic Gaussian") {
  const double sigma = 1.7;
  const Wave psi(kGrid, detail::sample(kGrid, [&](double x) {
                   return std::pow(std::numbers::pi * sigma * sigma, -0.25) * std::exp(-x * x / (2 * sigma * sigma));
                 }));
  const Wave phi = to_momentum(psi);
  double worst = 0;
  for (Eigen::Index m = 0; m < phi.grid().size(); ++m) {
    const double p = phi.grid().x(m);
    const double ref = std::pow(sigma * sigma / std::numbers::pi, 0.25) * std::exp(-sigma * sigma * p * p / 2);
    worst = std::max(worst, std::abs(phi[m] - ref));
  }
  CHECK(worst < 1e-10);
  CHECK(l2_distance(from_momentum(phi), psi) < 1e-12);
}

TEST_CASE("quarter rotation multiplies Fock states by (-i)^n") {
  for (int n = 0; n < 5; ++n) {
    const Wave psi = fock(n, kGrid);
    const auto phase = std::pow(std::complex<double>(0, -1), n);
    CHECK(l2_distance(rotate_quarter(psi), Wave(kGrid, psi.amplitudes() * phase)) < 1e-10);
  }
}

TEST_CASE("momentum sampling phase reference") {
  const Wave even = squeezed_cat(CatParams{Parity::even, 2.0, 1.0}, kGrid);
  const CVector<double> centered = momentum_samples(even, kGrid, PhaseReference::centered);
  const CVector<double> edge = momentum_samples(even, kGrid, PhaseReference::edge);
  CHECK(centered.imag().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(edge.imag().cwiseAbs().maxCoeff() > 0.1);
  CHECK(edge.cwiseAbs().isApprox(centered.cwiseAbs(), 1e-10));
}

TEST_CASE("parity and reflection") {
  CHECK(parity_overlap(fock(3, kGrid)) == doctest::Approx(-1.0));
  CHECK(parity_overlap(fock(4, kGrid)) == doctest::Approx(1.0));
}

TEST_CASE("density kernel against the dense matrix") {
  const Wave a = fock(1, kGrid), b = squeezed_cat(CatParams{Parity::even, 1.0, 1.0}, kGrid);
  CMatrix<double> cols(kGrid.size(), 2);
  cols.col(0) = a.amplitudes();
  cols.col(1) = b.amplitudes();
  RVector<double> w(2);
  w << 0.3, 0.7;
  const Kernel rho = Kernel::from_ensemble(kGrid, cols, w);
  CHECK(rho.rank() == 2);
  CHECK(rho.trace() == doctest::Approx(1.0));
  const double ab = std::norm(inner(a, b));
  CHECK(rho.purity() == doctest::Approx(0.09 + 0.49 + 2 * 0.21 * ab).epsilon(1e-10));
  CHECK(fidelity(rho, b) == doctest::Approx(0.3 * ab + 0.7).epsilon(1e-10));

  const CMatrix<double> dense = cols * w.cast<std::complex<double>>().asDiagonal() * cols.adjoint();
  const Kernel again = Kernel::from_matrix(kGrid, dense);
  CHECK((again.matrix() - rho.matrix()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("states that leave the grid are rejected") {
  CHECK_THROWS_AS(squeezed_cat(CatParams{Parity::even, 6.0, 0.5, CatFrame::position}, kGrid), PreconditionError);
}
