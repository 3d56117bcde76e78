#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "cvbell/qgrid.hpp"

namespace cvbell {

enum class Parity { even, odd };
enum class CatFrame { rotated, position };
enum class LogicalBit { zero, one };
enum class FGKind { f, g };

// Squeezed Schroedinger cat.  The rotated frame is the envelope form
// e^{-s'^2 x^2/2} cos|sin(s' sqrt2 alpha x); the position frame is the pair of
// squeezed coherent peaks at +-sqrt2 alpha / s' with width 1/s'.
struct CatParams {
  Parity parity = Parity::even;
  double alpha = 1.0;
  double s_prime = 1.0;
  CatFrame frame = CatFrame::rotated;
};

struct CombParams {
  LogicalBit bit = LogicalBit::zero;
  double a = 1.0;
  double s = 0.1;
  double s_prime = 0.1;

  bool condition_holds() const { return s < a / 3 && a < 1 / (3 * s_prime); }
};

struct FGParams {
  double a_bar = 1.0;
  double s_bar = 0.1;
  double s_prime = 0.1;

  static FGParams from_comb(const CombParams& c) {
    return {std::numbers::sqrt2 * c.a, std::numbers::sqrt2 * c.s, c.s_prime};
  }
};

inline double gaussian_peak(double x, double width) {
  return std::pow(std::numbers::pi * width * width, -0.25) * std::exp(-x * x / (2 * width * width));
}

namespace detail {

template <typename Scalar>
WaveFunction<Scalar> symmetrized(const QuadratureGrid<Scalar>& grid, CVector<Scalar> values, Parity parity) {
  const Eigen::Index n = grid.size();
  CVector<Scalar> out(n);
  const Scalar sign = parity == Parity::even ? Scalar(1) : Scalar(-1);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = (values[i] + sign * values[(n - i) % n]) / Scalar(2);
  if (parity == Parity::odd) out[0] = 0;  // x_0 = -x_max is its own partner on the periodic grid
  return normalize(WaveFunction<Scalar>(grid, std::move(out)));
}

template <typename Scalar, typename Fn>
CVector<Scalar> sample(const QuadratureGrid<Scalar>& grid, Fn&& fn) {
  CVector<Scalar> v(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) v[i] = fn(static_cast<double>(grid.x(i)));
  return v;
}

// Peak sum sum_k G_width(x - (k + shift) spacing), restricted to peaks whose
// envelope weight exceeds 1e-12 of its maximum.
inline double peak_train(double x, double spacing, double shift, double width, double s_prime, double reach) {
  const double cutoff = std::sqrt(2 * std::log(1e12)) / s_prime;
  const double limit = std::min(cutoff, reach);
  const long kmax = static_cast<long>(std::ceil(limit / spacing)) + 1;
  double sum = 0;
  for (long k = -kmax; k <= kmax; ++k) {
    const double c = (static_cast<double>(k) + shift) * spacing;
    if (std::abs(c) > limit + spacing) continue;
    sum += gaussian_peak(x - c, width);
  }
  return sum;
}

}  // namespace detail

template <typename Scalar = double>
WaveFunction<Scalar> fock(int n, const QuadratureGrid<Scalar>& grid) {
  require(n >= 0, "photon number must be non-negative");
  const double limit = 1.0 / (2.0 * std::sqrt(2.0 * n + 1.0));
  if (static_cast<double>(grid.dx()) >= limit)
    throw PreconditionError("grid too coarse for fock(" + std::to_string(n) + "): dx must be below " +
                            std::to_string(limit));
  const RVector<Scalar> x = grid.points();
  RVector<Scalar> prev = RVector<Scalar>::Zero(grid.size());
  RVector<Scalar> cur = (std::pow(std::numbers::pi_v<Scalar>, Scalar(-0.25)) * (-x.array().square() / 2).exp()).matrix();
  for (int k = 0; k < n; ++k) {
    const Scalar kk = static_cast<Scalar>(k);
    RVector<Scalar> next = (std::sqrt(2 / (kk + 1)) * x.array() * cur.array() -
                            std::sqrt(kk / (kk + 1)) * prev.array()).matrix();
    prev = std::move(cur);
    cur = std::move(next);
  }
  auto psi = detail::symmetrized(grid, CVector<Scalar>(cur.template cast<std::complex<Scalar>>()),
                                 n % 2 == 0 ? Parity::even : Parity::odd);
  require_fits(psi, "fock(" + std::to_string(n) + ")");
  return psi;
}

template <typename Scalar = double>
WaveFunction<Scalar> vacuum(const QuadratureGrid<Scalar>& grid) {
  return fock(0, grid);
}

template <typename Scalar = double>
WaveFunction<Scalar> squeezed_cat(const CatParams& p, const QuadratureGrid<Scalar>& grid) {
  require(p.alpha > 0 && p.s_prime > 0, "cat amplitude and squeezing must be positive");
  const double sp = p.s_prime;
  const bool even = p.parity == Parity::even;
  CVector<Scalar> v;
  if (p.frame == CatFrame::rotated) {
    const double k = sp * std::numbers::sqrt2 * p.alpha;
    v = detail::sample(grid, [&](double x) {
      const double env = std::exp(-sp * sp * x * x / 2);
      return env * (even ? std::cos(k * x) : std::sin(k * x));
    });
  } else {
    const double x0 = std::numbers::sqrt2 * p.alpha / sp;
    v = detail::sample(grid, [&](double x) {
      const double l = std::exp(-sp * sp * (x - x0) * (x - x0) / 2);
      const double r = std::exp(-sp * sp * (x + x0) * (x + x0) / 2);
      return even ? l + r : l - r;
    });
  }
  auto psi = detail::symmetrized(grid, std::move(v), p.parity);
  require_fits(psi, "squeezed_cat");
  return psi;
}

template <typename Scalar = double>
WaveFunction<Scalar> comb(const CombParams& p, const QuadratureGrid<Scalar>& grid) {
  require(p.a > 0 && p.s > 0 && p.s_prime > 0, "comb parameters must be positive");
  if (static_cast<double>(grid.dx()) > p.s / 4)
    throw PreconditionError("grid cannot resolve comb peaks: dx must be at most s/4 = " + std::to_string(p.s / 4));
  const double shift = p.bit == LogicalBit::zero ? 0.0 : 0.5;
  const double reach = static_cast<double>(grid.x_max()) + 10 * p.s;
  auto v = detail::sample(grid, [&](double x) {
    return gaussian_peak(x, 1 / p.s_prime) * detail::peak_train(x, p.a, shift, p.s, p.s_prime, reach);
  });
  auto psi = detail::symmetrized(grid, std::move(v), Parity::even);
  require_fits(psi, "comb");
  return psi;
}

template <typename Scalar = double>
WaveFunction<Scalar> fg_reference(const FGParams& p, FGKind kind, const QuadratureGrid<Scalar>& grid) {
  require(p.a_bar > 0 && p.s_bar > 0 && p.s_prime > 0, "reference parameters must be positive");
  if (static_cast<double>(grid.dx()) > p.s_bar / 4)
    throw PreconditionError("grid cannot resolve reference peaks: dx must be at most s_bar/4");
  const double reach = static_cast<double>(grid.x_max()) + 10 * p.s_bar;
  const double k = std::numbers::pi / (2 * p.a_bar);
  auto v = detail::sample(grid, [&](double x) {
    const double base =
        gaussian_peak(x, 1 / p.s_prime) * detail::peak_train(x, p.a_bar, 0.5, p.s_bar, p.s_prime, reach);
    return base * (kind == FGKind::f ? std::cos(k * x) : std::sin(k * x));
  });
  auto psi = detail::symmetrized(grid, std::move(v), kind == FGKind::f ? Parity::even : Parity::odd);
  require_fits(psi, "fg_reference");
  return psi;
}

}  // namespace cvbell
