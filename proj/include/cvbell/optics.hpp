#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "cvbell/qgrid.hpp"
#include "cvbell/states.hpp"

namespace cvbell {

// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order) {
  require(order >= 1, "quadrature order must be positive");
  std::vector<double> nodes(order), weights(order);
  for (int i = 0; i < order; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 1;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = z;
      for (int k = 2; k <= order; ++k) {
        const double pk = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (order == 1) p0 = 1;
      dp = order * (z * p1 - p0) / (z * z - 1);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    if (order == 1) {
      z = 0;
      dp = 1;
    }
    nodes[order - 1 - i] = z;
    weights[order - 1 - i] = order == 1 ? 2.0 : 2 / ((1 - z * z) * dp * dp);
  }
  return {nodes, weights};
}

enum class WindowKind { single, periodic };

// Acceptance set of a homodyne herald: |x - center| < width/2, or the lattice
// |x - offset - k spacing| < width/2 for all integers k.
struct HeraldWindow {
  WindowKind kind = WindowKind::single;
  double center = 0.0;
  double spacing = 0.0;
  double offset = 0.0;
  double width = 0.1;
  int nodes = 5;
  double max_node_span = 1.0;

  static HeraldWindow single(double center, double width, int nodes = 5) {
    HeraldWindow w;
    w.center = center;
    w.width = width;
    w.nodes = nodes;
    w.validate();
    return w;
  }

  static HeraldWindow periodic(double spacing, double offset, double width, int nodes = 5) {
    HeraldWindow w;
    w.kind = WindowKind::periodic;
    w.spacing = spacing;
    w.offset = offset;
    w.width = width;
    w.nodes = nodes;
    w.validate();
    return w;
  }

  // Narrowest resolvable herald: one grid cell, one node.
  static HeraldWindow tight(double dx, double center = 0.0) { return single(center, dx, 1); }

  bool is_tight(double dx) const { return nodes == 1 && width <= dx * (1 + 1e-12); }

  void validate() const {
    require(width > 0, "herald window width must be positive");
    require(nodes >= 1, "herald window needs at least one node");
    if (kind == WindowKind::periodic) {
      require(spacing > 0, "periodic window spacing must be positive");
      require(width < spacing, "periodic windows overlap: width must be below the spacing");
    }
  }

  // Accepted intervals meeting [-bound, bound].
  std::vector<std::pair<double, double>> intervals(double bound) const {
    std::vector<std::pair<double, double>> out;
    auto add = [&](double c) {
      const double lo = c - width / 2, hi = c + width / 2;
      if (hi >= -bound && lo <= bound) out.emplace_back(lo, hi);
    };
    if (kind == WindowKind::single) {
      add(center);
    } else {
      const long k0 = static_cast<long>(std::floor((-bound - width - offset) / spacing));
      const long k1 = static_cast<long>(std::ceil((bound + width - offset) / spacing));
      for (long k = k0; k <= k1; ++k) add(offset + static_cast<double>(k) * spacing);
    }
    return out;
  }

  // Quadrature samples (x_m, weight) covering the accepted set within bound.
  std::vector<std::pair<double, double>> samples(double bound) const {
    std::vector<std::pair<double, double>> out;
    const auto [t, w] = gauss_legendre(nodes);
    for (const auto& [lo, hi] : intervals(bound)) {
      const int pieces = nodes == 1 ? 1 : std::max(1, static_cast<int>(std::ceil((hi - lo) / max_node_span)));
      const double len = (hi - lo) / pieces;
      for (int piece = 0; piece < pieces; ++piece) {
        const double mid = lo + (piece + 0.5) * len;
        for (int q = 0; q < nodes; ++q) out.emplace_back(mid + t[q] * len / 2, w[q] * len / 2);
      }
    }
    return out;
  }
};

template <typename Scalar = double>
struct HeraldOutcome {
  DensityKernel<Scalar> state;
  Scalar probability;
  std::vector<std::pair<Scalar, Scalar>> window_samples;
};

namespace detail {

// Half-width of the region carrying all but ~1e-30 of the position density.
template <typename Scalar>
Scalar support_radius(const DensityKernel<Scalar>& rho) {
  const RVector<Scalar> d = position_density(rho);
  const Scalar peak = d.maxCoeff();
  const auto& g = rho.grid();
  Scalar r = 0;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (d[i] > Scalar(1e-30) * peak) r = std::max(r, std::abs(g.x(i)));
  return r + g.dx();
}

// Components of an input evaluated at (x_i + shift)/sqrt2 across the grid.
template <typename Scalar>
class PortSampler {
 public:
  explicit PortSampler(const DensityKernel<Scalar>& rho)
      : rho_(rho),
        resampler_(rho.grid().size(), rho.grid().x(0), rho.grid().dx(),
                   rho.grid().dx() / std::numbers::sqrt2_v<Scalar>, rho.grid().size()) {
    for (Eigen::Index k = 0; k < rho.rank(); ++k) spectra_.push_back(resampler_.spectrum(rho.vectors().col(k)));
  }

  CVector<Scalar> operator()(Eigen::Index k, Scalar shift) const {
    const Scalar y0 = (rho_.grid().x(0) + shift) / std::numbers::sqrt2_v<Scalar>;
    return resampler_.from_spectrum(spectra_[static_cast<std::size_t>(k)], y0);
  }

 private:
  const DensityKernel<Scalar>& rho_;
  spectral::Resampler<Scalar> resampler_;
  std::vector<CVector<Scalar>> spectra_;
};

}  // namespace detail

// Unnormalized herald density P(x_m) for the product input.
template <typename Scalar>
Scalar herald_density(const DensityKernel<Scalar>& in1, const DensityKernel<Scalar>& in2, Scalar x_m) {
  require_same_grid(in1.grid(), in2.grid());
  const detail::PortSampler<Scalar> port1(in1), port2(in2);
  Scalar p = 0;
  for (Eigen::Index i = 0; i < in1.rank(); ++i) {
    const RVector<Scalar> a = port1(i, x_m).cwiseAbs2();
    for (Eigen::Index j = 0; j < in2.rank(); ++j)
      p += in1.weights()[i] * in2.weights()[j] * a.dot(port2(j, -x_m).cwiseAbs2());
  }
  return p * in1.grid().dx();
}

// Symmetric beamsplitter with homodyne herald on the second output port.
template <typename Scalar>
HeraldOutcome<Scalar> herald_mix(const DensityKernel<Scalar>& in1, const DensityKernel<Scalar>& in2,
                                 const HeraldWindow& window, CompressionOptions options = {}) {
  require_same_grid(in1.grid(), in2.grid());
  window.validate();
  const auto& g = in1.grid();
  const Scalar bound = (detail::support_radius(in1) + detail::support_radius(in2)) / std::numbers::sqrt2_v<Scalar>;
  const auto samples = window.samples(static_cast<double>(bound));
  require(!samples.empty(), "herald window accepts no outcome inside the grid");

  const detail::PortSampler<Scalar> port1(in1), port2(in2);
  const Eigen::Index batch = 4 * options.max_rank + 64;
  CMatrix<Scalar> acc(g.size(), 0);
  std::vector<CVector<Scalar>> pending;
  std::vector<std::pair<Scalar, Scalar>> used;
  Scalar probability = 0;

  auto flush = [&] {
    if (pending.empty()) return;
    CMatrix<Scalar> cols(g.size(), acc.cols() + static_cast<Eigen::Index>(pending.size()));
    cols.leftCols(acc.cols()) = acc;
    for (std::size_t c = 0; c < pending.size(); ++c) cols.col(acc.cols() + static_cast<Eigen::Index>(c)) = pending[c];
    pending.clear();
    Scalar tr = 0;
    const CompressionOptions inner{1e-15, 2 * options.max_rank};
    const auto partial = DensityKernel<Scalar>::from_columns(g, cols, &tr, inner);
    acc = partial.vectors();
    for (Eigen::Index k = 0; k < acc.cols(); ++k) acc.col(k) *= std::sqrt(partial.weights()[k] * tr);
  };

  for (const auto& [xm_d, omega_d] : samples) {
    const Scalar xm = static_cast<Scalar>(xm_d), omega = static_cast<Scalar>(omega_d);
    if (std::abs(xm) > bound) continue;
    std::vector<CVector<Scalar>> left, right;
    for (Eigen::Index i = 0; i < in1.rank(); ++i) left.push_back(port1(i, xm));
    for (Eigen::Index j = 0; j < in2.rank(); ++j) right.push_back(port2(j, -xm));
    Scalar density = 0;
    for (Eigen::Index i = 0; i < in1.rank(); ++i) {
      for (Eigen::Index j = 0; j < in2.rank(); ++j) {
        CVector<Scalar> col = left[i].cwiseProduct(right[j]);
        const Scalar w = in1.weights()[i] * in2.weights()[j];
        const Scalar mass = col.squaredNorm() * g.dx() * w;
        if (!(mass > Scalar(1e-250))) continue;
        density += mass;
        pending.push_back(col * std::sqrt(omega * w));
      }
    }
    if (density > 0) {
      used.emplace_back(xm, omega * density);
      probability += omega * density;
    }
    if (static_cast<Eigen::Index>(pending.size()) >= batch) flush();
  }
  flush();
  if (!(probability > 0) || acc.cols() == 0) throw NumericalGuardError("herald window has zero probability");
  auto state = DensityKernel<Scalar>::from_columns(g, acc, nullptr, options);
  return {std::move(state), probability, std::move(used)};
}

template <typename Scalar>
WaveFunction<Scalar> squeeze(const WaveFunction<Scalar>& psi, Scalar s) {
  require(s > 0, "squeezing factor must be positive");
  const auto& g = psi.grid();
  if (s == 1) return psi;
  CVector<Scalar> v = spectral::resample<Scalar>(psi.amplitudes(), g.x(0), g.dx(), s * g.x(0), s * g.dx(), g.size());
  WaveFunction<Scalar> out(g, v * std::sqrt(s));
  require_fits(out, "squeeze");
  return out;
}

template <typename Scalar>
DensityKernel<Scalar> squeeze(const DensityKernel<Scalar>& rho, Scalar s) {
  return rho.transformed([&](const WaveFunction<Scalar>& v) { return squeeze(v, s); });
}

template <typename Scalar>
struct Annihilated {
  WaveFunction<Scalar> state;
  Scalar weight;
};

// a = (x + d/dx)/sqrt2 with spectral derivative; returns the normalized result and <a^dag a>.
template <typename Scalar>
CVector<Scalar> apply_annihilation(const WaveFunction<Scalar>& psi) {
  const RVector<Scalar> x = psi.grid().points();
  return (x.template cast<std::complex<Scalar>>().cwiseProduct(psi.amplitudes()) + position_derivative(psi)) /
         std::numbers::sqrt2_v<Scalar>;
}

template <typename Scalar>
Annihilated<Scalar> annihilate(const WaveFunction<Scalar>& psi) {
  WaveFunction<Scalar> raw(psi.grid(), apply_annihilation(psi));
  const Scalar weight = raw.norm_squared() / psi.norm_squared();
  if (weight < Scalar(1e-10)) throw PreconditionError("annihilation on a state without photons");
  return {normalize(raw), weight};
}

template <typename Scalar>
struct AnnihilatedKernel {
  DensityKernel<Scalar> state;
  Scalar weight;
};

template <typename Scalar>
AnnihilatedKernel<Scalar> annihilate(const DensityKernel<Scalar>& rho) {
  Scalar tr = 0;
  auto out = rho.transformed(
      [](const WaveFunction<Scalar>& v) { return WaveFunction<Scalar>(v.grid(), apply_annihilation(v)); }, &tr);
  if (tr < Scalar(1e-10)) throw PreconditionError("annihilation on a state without photons");
  return {std::move(out), tr};
}

// Affine-Gaussian map on quadrature statistics: y = scale * x + N(0, variance).
struct QuadratureNoise {
  double scale = 1.0;
  double variance = 0.0;

  bool is_identity() const { return scale == 1.0 && variance == 0.0; }
};

struct LossChannel {
  double transmission = 1.0;

  void validate() const {
    require(transmission > 0 && transmission <= 1, "line transmission must lie in (0, 1]");
  }
  // Raw homodyne outcome after the lossy line.
  QuadratureNoise physical() const {
    validate();
    return {std::sqrt(transmission), (1 - transmission) / 2};
  }
  // Outcome rescaled by 1/sqrt(T) at the receiver.
  QuadratureNoise calibrated() const {
    validate();
    return {1.0, (1 - transmission) / (2 * transmission)};
  }
};

namespace detail {

template <typename Scalar>
RVector<Scalar> noise_filter(const QuadratureGrid<Scalar>& g, const QuadratureNoise& noise) {
  const Eigen::Index n = g.size();
  const Scalar dk = 2 * std::numbers::pi_v<Scalar> / (n * g.dx());
  const Scalar k0 = -std::numbers::pi_v<Scalar> / g.dx();
  RVector<Scalar> f(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const Scalar k = k0 + m * dk;
    f[m] = std::exp(-static_cast<Scalar>(noise.variance) * k * k / 2);
  }
  f[0] = 0;  // Nyquist bin dropped so the operator is real
  return f;
}

}  // namespace detail

// Density (or cross-density) samples pushed through the noise map, on the same grid.
template <typename Scalar>
CVector<Scalar> apply_noise(const QuadratureGrid<Scalar>& g, const CVector<Scalar>& density, const QuadratureNoise& noise) {
  if (noise.is_identity()) return density;
  const Eigen::Index n = g.size();
  const Scalar a = static_cast<Scalar>(noise.scale);
  const Scalar dk = 2 * std::numbers::pi_v<Scalar> / (n * g.dx());
  const Scalar k0 = -std::numbers::pi_v<Scalar> / g.dx();
  CVector<Scalar> c = spectral::exponential_sum<Scalar>(density, a * g.x(0), a * g.dx(), k0, dk, n, -1);
  c = c.cwiseProduct(detail::noise_filter(g, noise).template cast<std::complex<Scalar>>());
  return spectral::exponential_sum<Scalar>(c, k0, dk, g.x(0), g.dx(), n, +1) / static_cast<Scalar>(n);
}

// Transpose of apply_noise: integration weights on the output grid mapped to the input grid.
template <typename Scalar>
CVector<Scalar> apply_noise_adjoint(const QuadratureGrid<Scalar>& g, const CVector<Scalar>& weights,
                                    const QuadratureNoise& noise) {
  if (noise.is_identity()) return weights;
  const Eigen::Index n = g.size();
  const Scalar a = static_cast<Scalar>(noise.scale);
  const Scalar dk = 2 * std::numbers::pi_v<Scalar> / (n * g.dx());
  const Scalar k0 = -std::numbers::pi_v<Scalar> / g.dx();
  CVector<Scalar> c = spectral::exponential_sum<Scalar>(weights, g.x(0), g.dx(), k0, dk, n, +1);
  c = c.cwiseProduct(detail::noise_filter(g, noise).template cast<std::complex<Scalar>>());
  return spectral::exponential_sum<Scalar>(c, k0, dk, a * g.x(0), a * g.dx(), n, -1) / static_cast<Scalar>(n);
}

template <typename Scalar = double>
struct JointDistribution {
  QuadratureGrid<Scalar> grid_a;
  QuadratureGrid<Scalar> grid_b;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> values;

  Scalar mass() const { return values.sum() * grid_a.dx() * grid_b.dx(); }
  RVector<Scalar> marginal_a() const { return values.rowwise().sum() * grid_b.dx(); }
  RVector<Scalar> marginal_b() const { return values.colwise().sum().transpose() * grid_a.dx(); }
};

template <typename Scalar>
JointDistribution<Scalar> apply_noise(const JointDistribution<Scalar>& p, const QuadratureNoise& noise_a,
                                      const QuadratureNoise& noise_b) {
  JointDistribution<Scalar> out = p;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat v = p.values;
  if (!noise_a.is_identity())
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      v.col(j) = apply_noise(p.grid_a, CVector<Scalar>(v.col(j).template cast<std::complex<Scalar>>()), noise_a).real();
  if (!noise_b.is_identity())
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      v.row(i) = apply_noise(p.grid_b, CVector<Scalar>(v.row(i).transpose().template cast<std::complex<Scalar>>()), noise_b)
                     .real()
                     .transpose();
  out.values = std::move(v);
  return out;
}

// Homodyne statistics after independent lossy lines on the two modes.
template <typename Scalar>
JointDistribution<Scalar> lossy_joint_distribution(const JointDistribution<Scalar>& p, const LossChannel& a,
                                                   const LossChannel& b) {
  a.validate();
  b.validate();
  const Scalar m = p.mass();
  require(std::abs(m - 1) < 1e-6, "joint distribution is not normalized");
  auto out = apply_noise(p, a.physical(), b.physical());
  const Scalar peak = out.values.cwiseAbs().maxCoeff();
  out.values = out.values.unaryExpr([&](Scalar v) { return std::abs(v) < Scalar(1e-13) * peak ? std::max(v, Scalar(0)) : v; });
  out.values /= out.mass();
  return out;
}

// Single-mode version of the loss map acting on a position density.
template <typename Scalar>
RVector<Scalar> lossy_marginal(const QuadratureGrid<Scalar>& g, const RVector<Scalar>& density, const LossChannel& ch) {
  return apply_noise(g, CVector<Scalar>(density.template cast<std::complex<Scalar>>()), ch.physical()).real();
}

template <typename Scalar>
Scalar density_variance(const QuadratureGrid<Scalar>& g, const RVector<Scalar>& density) {
  const RVector<Scalar> x = g.points();
  const Scalar mass = density.sum();
  const Scalar mean = x.dot(density) / mass;
  return (x.array() - mean).square().matrix().dot(density) / mass;
}

struct CombIdentityReport {
  bool condition_holds = false;
  double new_spacing = 0.0;
  double fidelity_zero = 0.0;  // x_m = 0 herald vs |0> at spacing a sqrt2
  double fidelity_one = 0.0;   // x_m = a sqrt2 / 2 herald vs |1> at spacing a sqrt2
  double probability_zero = 0.0;
  double probability_one = 0.0;
};

// Two copies of |0>_a on a symmetric beamsplitter, heralded at the two lattice offsets.
template <typename Scalar>
CombIdentityReport herald_comb_identity_check(const CombParams& params, const QuadratureGrid<Scalar>& grid) {
  CombIdentityReport r;
  r.condition_holds = params.condition_holds();
  r.new_spacing = params.a * std::numbers::sqrt2;
  CombParams zero = params;
  zero.bit = LogicalBit::zero;
  const DensityKernel<Scalar> in(comb(zero, grid));
  const double dx = static_cast<double>(grid.dx());
  const auto h0 = herald_mix(in, in, HeraldWindow::tight(dx, 0.0));
  const auto h1 = herald_mix(in, in, HeraldWindow::tight(dx, r.new_spacing / 2));
  CombParams target = params;
  target.a = r.new_spacing;
  target.bit = LogicalBit::zero;
  r.fidelity_zero = static_cast<double>(fidelity(h0.state, comb(target, grid)));
  target.bit = LogicalBit::one;
  r.fidelity_one = static_cast<double>(fidelity(h1.state, comb(target, grid)));
  r.probability_zero = static_cast<double>(h0.probability);
  r.probability_one = static_cast<double>(h1.probability);
  return r;
}

}  // namespace cvbell
