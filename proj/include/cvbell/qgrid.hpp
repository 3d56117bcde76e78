#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "cvbell/errors.hpp"
#include "cvbell/spectral.hpp"

namespace cvbell {

// Symmetric uniform grid x_i = -x_max + i dx, i < n_points.
template <typename Scalar = double>
class QuadratureGrid {
 public:
  QuadratureGrid(Scalar x_max, Eigen::Index n_points) : x_max_(x_max), n_(n_points) {
    require(x_max > 0, "grid half-extent must be positive");
    require(n_points >= 64 && (n_points & (n_points - 1)) == 0,
            "grid point count must be a power of two >= 64, got " + std::to_string(n_points));
    dx_ = 2 * x_max / static_cast<Scalar>(n_points);
  }

  Scalar x_max() const { return x_max_; }
  Eigen::Index size() const { return n_; }
  Scalar dx() const { return dx_; }
  Scalar x(Eigen::Index i) const { return -x_max_ + static_cast<Scalar>(i) * dx_; }

  RVector<Scalar> points() const {
    return RVector<Scalar>::LinSpaced(n_, -x_max_, -x_max_ + static_cast<Scalar>(n_ - 1) * dx_);
  }

  // Grid of the discrete Fourier partner: dp = 2 pi / (n dx), half-extent pi / dx.
  QuadratureGrid conjugate() const { return QuadratureGrid(std::numbers::pi_v<Scalar> / dx_, n_); }

  QuadratureGrid refined() const { return QuadratureGrid(x_max_, 2 * n_); }

  bool operator==(const QuadratureGrid& other) const { return x_max_ == other.x_max_ && n_ == other.n_; }

 private:
  Scalar x_max_;
  Eigen::Index n_;
  Scalar dx_;
};

template <typename Scalar>
QuadratureGrid<Scalar> make_grid(Scalar x_max, Eigen::Index n_points) {
  return QuadratureGrid<Scalar>(x_max, n_points);
}

inline constexpr double kTailTolerance = 1e-6;

template <typename Scalar = double>
class WaveFunction {
 public:
  using Complex = std::complex<Scalar>;

  WaveFunction(QuadratureGrid<Scalar> grid, CVector<Scalar> amplitudes)
      : grid_(grid), amplitudes_(std::move(amplitudes)) {
    require(amplitudes_.size() == grid_.size(), "amplitude count does not match grid");
  }

  const QuadratureGrid<Scalar>& grid() const { return grid_; }
  const CVector<Scalar>& amplitudes() const { return amplitudes_; }
  Complex operator[](Eigen::Index i) const { return amplitudes_[i]; }

  Scalar norm_squared() const { return amplitudes_.squaredNorm() * grid_.dx(); }

  // Largest edge magnitude relative to the peak.
  Scalar tail_ratio() const {
    const Scalar peak = amplitudes_.cwiseAbs().maxCoeff();
    if (peak == 0) return 0;
    const Eigen::Index n = amplitudes_.size();
    return std::max(std::abs(amplitudes_[0]), std::abs(amplitudes_[n - 1])) / peak;
  }

  bool fits_grid() const { return tail_ratio() < kTailTolerance; }

 private:
  QuadratureGrid<Scalar> grid_;
  CVector<Scalar> amplitudes_;
};

template <typename Scalar>
void require_same_grid(const QuadratureGrid<Scalar>& a, const QuadratureGrid<Scalar>& b) {
  require(a == b, "states live on different grids");
}

template <typename Scalar>
void require_fits(const WaveFunction<Scalar>& psi, const std::string& what) {
  if (!psi.fits_grid())
    throw PreconditionError(what + ": state does not fit the grid (edge/peak = " +
                            std::to_string(static_cast<double>(psi.tail_ratio())) + ")");
}

template <typename Scalar>
WaveFunction<Scalar> normalize(const WaveFunction<Scalar>& psi) {
  const Scalar n2 = psi.norm_squared();
  require(n2 > 0, "cannot normalize a zero wavefunction");
  return WaveFunction<Scalar>(psi.grid(), psi.amplitudes() / std::sqrt(n2));
}

template <typename Scalar>
std::complex<Scalar> inner(const WaveFunction<Scalar>& a, const WaveFunction<Scalar>& b) {
  require_same_grid(a.grid(), b.grid());
  return a.amplitudes().dot(b.amplitudes()) * a.grid().dx();
}

template <typename Scalar>
Scalar fidelity(const WaveFunction<Scalar>& a, const WaveFunction<Scalar>& b) {
  return std::norm(inner(a, b)) / (a.norm_squared() * b.norm_squared());
}

template <typename Scalar>
Scalar l2_distance(const WaveFunction<Scalar>& a, const WaveFunction<Scalar>& b) {
  require_same_grid(a.grid(), b.grid());
  return std::sqrt((a.amplitudes() - b.amplitudes()).squaredNorm() * a.grid().dx());
}

// psi(-x); exact on the symmetric grid because -x_i = x_{n-i}.
template <typename Scalar>
WaveFunction<Scalar> reflect(const WaveFunction<Scalar>& psi) {
  const Eigen::Index n = psi.grid().size();
  CVector<Scalar> out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = psi[(n - i) % n];
  return WaveFunction<Scalar>(psi.grid(), std::move(out));
}

template <typename Scalar>
Scalar parity_overlap(const WaveFunction<Scalar>& psi) {
  return std::real(inner(psi, reflect(psi))) / psi.norm_squared();
}

// Momentum wavefunction on the conjugate grid.
template <typename Scalar>
WaveFunction<Scalar> to_momentum(const WaveFunction<Scalar>& psi) {
  require_fits(psi, "to_momentum");
  const Eigen::Index n = psi.grid().size();
  CVector<Scalar> alt = psi.amplitudes();
  for (Eigen::Index j = 1; j < n; j += 2) alt[j] = -alt[j];
  CVector<Scalar> out = spectral::forward<Scalar>(alt);
  const Scalar scale = psi.grid().dx() / std::sqrt(2 * std::numbers::pi_v<Scalar>);
  for (Eigen::Index m = 0; m < n; ++m) out[m] *= (m % 2 == 0 ? scale : -scale);
  return WaveFunction<Scalar>(psi.grid().conjugate(), std::move(out));
}

template <typename Scalar>
WaveFunction<Scalar> from_momentum(const WaveFunction<Scalar>& phi) {
  const Eigen::Index n = phi.grid().size();
  CVector<Scalar> alt = phi.amplitudes();
  for (Eigen::Index m = 1; m < n; m += 2) alt[m] = -alt[m];
  CVector<Scalar> out = spectral::backward<Scalar>(alt);
  const Scalar scale = phi.grid().dx() / std::sqrt(2 * std::numbers::pi_v<Scalar>);
  for (Eigen::Index j = 0; j < n; ++j) out[j] *= (j % 2 == 0 ? scale : -scale);
  return WaveFunction<Scalar>(phi.grid().conjugate(), std::move(out));
}

enum class PhaseReference { centered, edge };

// Momentum amplitudes sampled on an arbitrary uniform grid (the same box by default).
template <typename Scalar>
CVector<Scalar> momentum_samples(const WaveFunction<Scalar>& psi, const QuadratureGrid<Scalar>& pgrid,
                                 PhaseReference phase = PhaseReference::centered) {
  const auto& g = psi.grid();
  return spectral::fourier<Scalar>(psi.amplitudes(), g.x(0), g.dx(), pgrid.x(0), pgrid.dx(), pgrid.size(),
                                   phase == PhaseReference::centered);
}

// Fourier transform placed back on the position grid (a pi/2 phase-space rotation).
template <typename Scalar>
WaveFunction<Scalar> rotate_quarter(const WaveFunction<Scalar>& psi) {
  return WaveFunction<Scalar>(psi.grid(), momentum_samples(psi, psi.grid()));
}

template <typename Scalar>
CVector<Scalar> position_derivative(const WaveFunction<Scalar>& psi) {
  return spectral::derivative<Scalar>(psi.amplitudes(), psi.grid().dx());
}

template <typename Scalar>
Scalar second_moment_x(const WaveFunction<Scalar>& psi) {
  const RVector<Scalar> x = psi.grid().points();
  return (x.array().square() * psi.amplitudes().array().abs2()).sum() * psi.grid().dx();
}

template <typename Scalar>
Scalar second_moment_p(const WaveFunction<Scalar>& psi) {
  return position_derivative(psi).squaredNorm() * psi.grid().dx();
}

template <typename Scalar>
Scalar mean_photon(const WaveFunction<Scalar>& psi) {
  const Scalar n2 = psi.norm_squared();
  return ((second_moment_x(psi) + second_moment_p(psi)) / n2 - 1) / 2;
}

template <typename Scalar>
Scalar variance_x(const WaveFunction<Scalar>& psi) {
  const RVector<Scalar> x = psi.grid().points();
  const RVector<Scalar> rho = psi.amplitudes().cwiseAbs2() * psi.grid().dx();
  const Scalar mass = rho.sum();
  const Scalar mean = x.dot(rho) / mass;
  return (x.array() - mean).square().matrix().dot(rho) / mass;
}

template <typename Scalar>
Scalar variance_p(const WaveFunction<Scalar>& psi) {
  const CVector<Scalar> d = position_derivative(psi);
  const Scalar n2 = psi.norm_squared();
  const std::complex<Scalar> mean = psi.amplitudes().dot(d) * psi.grid().dx() / n2;
  const Scalar p_mean = std::imag(mean);
  return d.squaredNorm() * psi.grid().dx() / n2 - p_mean * p_mean;
}

struct CompressionOptions {
  double relative_tolerance = 1e-10;
  Eigen::Index max_rank = 32;
};

// Mixed state rho = sum_k w_k |v_k><v_k| with orthonormal v_k (weights sum to one).
template <typename Scalar = double>
class DensityKernel {
 public:
  explicit DensityKernel(const WaveFunction<Scalar>& pure) : grid_(pure.grid()) {
    const WaveFunction<Scalar> unit = normalize(pure);
    vectors_ = unit.amplitudes();
    weights_ = RVector<Scalar>::Ones(1);
  }

  // Builds rho proportional to sum_c |col_c><col_c| and reports the unnormalized trace.
  static DensityKernel from_columns(const QuadratureGrid<Scalar>& grid, const CMatrix<Scalar>& columns,
                                    Scalar* trace = nullptr, CompressionOptions options = {}) {
    require(columns.rows() == grid.size(), "column length does not match grid");
    require(columns.cols() > 0, "empty ensemble");
    const Scalar root_dx = std::sqrt(grid.dx());
    const Scalar peak = columns.cwiseAbs().maxCoeff();
    if (!(peak > 0) || !std::isfinite(peak)) throw NumericalGuardError("ensemble has zero or non-finite weight");
    const CMatrix<Scalar> scaled = columns * (root_dx / peak);
    // Gram spectrum selects the dominant subspace; a QR pass restores orthonormality.
    const CMatrix<Scalar> gram = scaled.adjoint() * scaled;
    Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> eig(gram);
    const RVector<Scalar> lambda = eig.eigenvalues().reverse().cwiseMax(Scalar(0));
    const Scalar total = lambda.sum();
    if (trace) *trace = total * peak * peak;
    if (!(total > 0)) throw NumericalGuardError("ensemble has zero weight");
    Eigen::Index keep = 0;
    while (keep < lambda.size() && keep < options.max_rank &&
           lambda[keep] > static_cast<Scalar>(options.relative_tolerance) * total)
      ++keep;
    keep = std::max<Eigen::Index>(keep, 1);
    const CMatrix<Scalar> basis = scaled * eig.eigenvectors().rowwise().reverse().leftCols(keep);
    Eigen::HouseholderQR<CMatrix<Scalar>> qr(basis);
    const CMatrix<Scalar> q = qr.householderQ() * CMatrix<Scalar>::Identity(basis.rows(), keep);
    const CMatrix<Scalar> r = qr.matrixQR().topRows(keep).template triangularView<Eigen::Upper>();
    Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> small(r * r.adjoint());
    const RVector<Scalar> mu = small.eigenvalues().reverse().cwiseMax(Scalar(0));
    DensityKernel out(grid);
    out.vectors_ = q * small.eigenvectors().rowwise().reverse() / root_dx;
    out.weights_ = mu / mu.sum();
    return out;
  }

  static DensityKernel from_matrix(const QuadratureGrid<Scalar>& grid, const CMatrix<Scalar>& kernel,
                                   CompressionOptions options = {}) {
    require(kernel.rows() == grid.size() && kernel.cols() == grid.size(), "kernel shape does not match grid");
    const CMatrix<Scalar> herm = (kernel + kernel.adjoint()) / Scalar(2) * grid.dx();
    Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> eig(herm);
    const RVector<Scalar> values = eig.eigenvalues().reverse();
    const CMatrix<Scalar> vecs = eig.eigenvectors().rowwise().reverse();
    const Scalar total = values.cwiseMax(Scalar(0)).sum();
    require(total > 0, "kernel has no positive spectrum");
    Eigen::Index keep = 0;
    while (keep < values.size() && keep < options.max_rank &&
           values[keep] > static_cast<Scalar>(options.relative_tolerance) * total)
      ++keep;
    keep = std::max<Eigen::Index>(keep, 1);
    DensityKernel out(grid);
    out.vectors_ = vecs.leftCols(keep) / std::sqrt(grid.dx());
    out.weights_ = values.head(keep) / values.head(keep).sum();
    return out;
  }

  // Ensemble of normalized or unnormalized vectors with nonnegative weights.
  static DensityKernel from_ensemble(const QuadratureGrid<Scalar>& grid, const CMatrix<Scalar>& vectors,
                                     const RVector<Scalar>& weights, CompressionOptions options = {}) {
    require(vectors.cols() == weights.size(), "ensemble weight count mismatch");
    CMatrix<Scalar> cols = vectors;
    for (Eigen::Index c = 0; c < cols.cols(); ++c) {
      require(weights[c] >= 0, "negative ensemble weight");
      cols.col(c) *= std::sqrt(weights[c]);
    }
    return from_columns(grid, cols, nullptr, options);
  }

  const QuadratureGrid<Scalar>& grid() const { return grid_; }
  const CMatrix<Scalar>& vectors() const { return vectors_; }
  const RVector<Scalar>& weights() const { return weights_; }
  Eigen::Index rank() const { return weights_.size(); }

  WaveFunction<Scalar> component(Eigen::Index k) const { return WaveFunction<Scalar>(grid_, vectors_.col(k)); }
  WaveFunction<Scalar> dominant() const { return component(0); }

  CMatrix<Scalar> matrix() const {
    return vectors_ * weights_.template cast<std::complex<Scalar>>().asDiagonal() * vectors_.adjoint();
  }

  Scalar trace() const {
    Scalar t = 0;
    for (Eigen::Index k = 0; k < rank(); ++k) t += weights_[k] * vectors_.col(k).squaredNorm() * grid_.dx();
    return t;
  }

  Scalar purity() const {
    const CMatrix<Scalar> gram = vectors_.adjoint() * vectors_ * grid_.dx();
    Scalar p = 0;
    for (Eigen::Index i = 0; i < rank(); ++i)
      for (Eigen::Index j = 0; j < rank(); ++j) p += weights_[i] * weights_[j] * std::norm(gram(i, j));
    return p;
  }

  // Applies a vector map to every component and recompresses.
  template <typename Map>
  DensityKernel transformed(Map&& map, Scalar* trace = nullptr, CompressionOptions options = {}) const {
    CMatrix<Scalar> cols(grid_.size(), rank());
    for (Eigen::Index k = 0; k < rank(); ++k)
      cols.col(k) = map(component(k)).amplitudes() * std::sqrt(weights_[k]);
    return from_columns(grid_, cols, trace, options);
  }

 private:
  explicit DensityKernel(const QuadratureGrid<Scalar>& grid) : grid_(grid) {}

  QuadratureGrid<Scalar> grid_;
  CMatrix<Scalar> vectors_;
  RVector<Scalar> weights_;
};

template <typename Scalar>
Scalar fidelity(const DensityKernel<Scalar>& rho, const WaveFunction<Scalar>& psi) {
  require_same_grid(rho.grid(), psi.grid());
  const CVector<Scalar> overlaps = rho.vectors().adjoint() * psi.amplitudes() * rho.grid().dx();
  return overlaps.cwiseAbs2().dot(rho.weights()) / psi.norm_squared();
}

template <typename Scalar>
Scalar mean_photon(const DensityKernel<Scalar>& rho) {
  Scalar n = 0;
  for (Eigen::Index k = 0; k < rho.rank(); ++k) n += rho.weights()[k] * mean_photon(rho.component(k));
  return n;
}

template <typename Scalar>
Scalar parity_overlap(const DensityKernel<Scalar>& rho) {
  Scalar p = 0;
  for (Eigen::Index k = 0; k < rho.rank(); ++k) p += rho.weights()[k] * parity_overlap(rho.component(k));
  return p;
}

template <typename Scalar>
RVector<Scalar> position_density(const DensityKernel<Scalar>& rho) {
  return rho.vectors().cwiseAbs2() * rho.weights();
}

using Grid = QuadratureGrid<double>;
using Wave = WaveFunction<double>;
using Kernel = DensityKernel<double>;

}  // namespace cvbell
