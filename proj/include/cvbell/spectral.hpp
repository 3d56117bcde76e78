#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>

namespace cvbell {

template <typename Scalar>
using CVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;
template <typename Scalar>
using CMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace spectral {

template <typename Scalar>
Eigen::FFT<Scalar>& engine() {
  thread_local Eigen::FFT<Scalar> fft = [] {
    Eigen::FFT<Scalar> f;
    f.SetFlag(Eigen::FFT<Scalar>::Unscaled);
    return f;
  }();
  return fft;
}

template <typename Scalar>
CVector<Scalar> forward(const CVector<Scalar>& in) {
  CVector<Scalar> out(in.size());
  engine<Scalar>().fwd(out, in);
  return out;
}

// Unscaled inverse: sum_m c_m e^{+2 pi i m j / n}.
template <typename Scalar>
CVector<Scalar> backward(const CVector<Scalar>& in) {
  CVector<Scalar> out(in.size());
  engine<Scalar>().inv(out, in);
  return out;
}

inline Eigen::Index next_pow2(Eigen::Index v) {
  Eigen::Index p = 1;
  while (p < v) p <<= 1;
  return p;
}

template <typename Scalar>
std::complex<Scalar> unit_phase(long double angle) {
  constexpr long double two_pi = 2.0L * std::numbers::pi_v<long double>;
  const long double reduced = std::fmod(angle, two_pi);
  return std::polar(Scalar(1), static_cast<Scalar>(reduced));
}

// e^{i (theta0 + k dtheta)} for k < count, recurrence resynchronised every 64 steps.
template <typename Scalar>
CVector<Scalar> phase_ramp(long double theta0, long double dtheta, Eigen::Index count) {
  CVector<Scalar> out(count);
  const std::complex<Scalar> step = unit_phase<Scalar>(dtheta);
  for (Eigen::Index k = 0; k < count; ++k)
    out[k] = (k % 64 == 0) ? unit_phase<Scalar>(theta0 + dtheta * static_cast<long double>(k)) : out[k - 1] * step;
  return out;
}

// Bluestein plan for X_j = sum_k a_k e^{i phi k j}, k < n, j < m.
template <typename Scalar>
class ChirpZ {
 public:
  ChirpZ(Eigen::Index n, Eigen::Index m, Scalar phi) : n_(n), m_(m), len_(next_pow2(n + m - 1)) {
    const Eigen::Index span = std::max(n, m);
    w_.resize(span);
    for (Eigen::Index k = 0; k < span; ++k) {
      const long double kk = static_cast<long double>(k);
      w_[k] = unit_phase<Scalar>(static_cast<long double>(phi) * kk * kk / 2.0L);
    }
    CVector<Scalar> rhs = CVector<Scalar>::Zero(len_);
    for (Eigen::Index l = 0; l < m; ++l) rhs[l] = std::conj(w_[l]);
    for (Eigen::Index l = 1; l < n; ++l) rhs[len_ - l] = std::conj(w_[l]);
    kernel_ = forward<Scalar>(rhs) / static_cast<Scalar>(len_);
  }

  CVector<Scalar> operator()(const CVector<Scalar>& a) const {
    CVector<Scalar> lhs = CVector<Scalar>::Zero(len_);
    lhs.head(n_) = a.cwiseProduct(w_.head(n_));
    CVector<Scalar> conv = backward<Scalar>(forward<Scalar>(lhs).cwiseProduct(kernel_));
    return conv.head(m_).cwiseProduct(w_.head(m_));
  }

 private:
  Eigen::Index n_, m_, len_;
  CVector<Scalar> w_;
  CVector<Scalar> kernel_;
};

template <typename Scalar>
CVector<Scalar> chirp_z(const CVector<Scalar>& a, Scalar phi, Eigen::Index m) {
  return ChirpZ<Scalar>(a.size(), m, phi)(a);
}

// Trigonometric interpolation of samples on x0 + j*dx at targets y0 + i*h (i < m), for a
// fixed sampling layout and step; the start y0 varies per call.  Targets outside the
// sampled box [x0, x0 + (n-1) dx] are set to zero.
template <typename Scalar>
class Resampler {
 public:
  Resampler(Eigen::Index n, Scalar x0, Scalar dx, Scalar h, Eigen::Index m)
      : n_(n), m_(m), x0_(x0), dx_(dx), h_(h), czt_(n, m, 2 * std::numbers::pi_v<Scalar> * h / (n * dx)) {}

  // Centered spectrum (frequency q - n/2 at index q), reusable across calls.
  CVector<Scalar> spectrum(const CVector<Scalar>& values) const {
    const CVector<Scalar> raw = forward<Scalar>(values) / static_cast<Scalar>(n_);
    CVector<Scalar> out(n_);
    for (Eigen::Index q = 0; q < n_; ++q) out[q] = raw[(q + n_ / 2) % n_];
    return out;
  }

  CVector<Scalar> from_spectrum(const CVector<Scalar>& centered, Scalar y0) const {
    const long double period = static_cast<long double>(n_) * dx_;
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    const long double t0 = static_cast<long double>(y0) - x0_;
    CVector<Scalar> coef = centered.cwiseProduct(phase_ramp<Scalar>(0.0L, two_pi * t0 / period, n_));
    CVector<Scalar> out = czt_(coef);
    const long double pi = std::numbers::pi_v<long double>;
    out = out.cwiseProduct(phase_ramp<Scalar>(-pi * t0 / dx_, -pi * static_cast<long double>(h_) / dx_, m_));
    const Scalar hi = x0_ + (n_ - 1) * dx_;
    const Scalar slack = dx_ * Scalar(1e-9);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const Scalar y = y0 + i * h_;
      if (y < x0_ - slack || y > hi + slack) out[i] = 0;
    }
    return out;
  }

  CVector<Scalar> operator()(const CVector<Scalar>& values, Scalar y0) const {
    return from_spectrum(spectrum(values), y0);
  }

 private:
  Eigen::Index n_, m_;
  Scalar x0_, dx_, h_;
  ChirpZ<Scalar> czt_;
};

template <typename Scalar>
CVector<Scalar> resample(const CVector<Scalar>& values, Scalar x0, Scalar dx, Scalar y0, Scalar h,
                         Eigen::Index m) {
  return Resampler<Scalar>(values.size(), x0, dx, h, m)(values, y0);
}

// sum_j v_j e^{sign i (a0 + j da)(b0 + l db)} for l < m.
template <typename Scalar>
CVector<Scalar> exponential_sum(const CVector<Scalar>& v, Scalar a0, Scalar da, Scalar b0, Scalar db,
                                Eigen::Index m, int sign) {
  const long double sg = sign;
  const CVector<Scalar> coef =
      v.cwiseProduct(phase_ramp<Scalar>(0.0L, sg * static_cast<long double>(da) * b0, v.size()));
  CVector<Scalar> out = chirp_z<Scalar>(coef, static_cast<Scalar>(sign) * da * db, m);
  return out.cwiseProduct(phase_ramp<Scalar>(sg * static_cast<long double>(a0) * b0,
                                             sg * static_cast<long double>(a0) * db, m));
}

// (2 pi)^{-1/2} sum_l psi_l e^{-i p x_l} dx at p = p0 + j*dp.  With centered = false the
// origin phase e^{-i p x0} is dropped (edge-referenced transform).
template <typename Scalar>
CVector<Scalar> fourier(const CVector<Scalar>& values, Scalar x0, Scalar dx, Scalar p0, Scalar dp,
                        Eigen::Index m, bool centered = true) {
  const Scalar scale = dx / std::sqrt(2 * std::numbers::pi_v<Scalar>);
  return exponential_sum<Scalar>(values, centered ? x0 : Scalar(0), dx, p0, dp, m, -1) * scale;
}

// Angular frequencies in FFT order, Nyquist bin zeroed.
template <typename Scalar>
RVector<Scalar> wavenumbers(Eigen::Index n, Scalar dx) {
  RVector<Scalar> k(n);
  const Scalar base = 2 * std::numbers::pi_v<Scalar> / (n * dx);
  for (Eigen::Index m = 0; m < n; ++m) {
    const Eigen::Index f = m < n / 2 ? m : m - n;
    k[m] = base * static_cast<Scalar>(f);
  }
  k[n / 2] = 0;
  return k;
}

template <typename Scalar>
CVector<Scalar> derivative(const CVector<Scalar>& values, Scalar dx) {
  const Eigen::Index n = values.size();
  const RVector<Scalar> k = wavenumbers<Scalar>(n, dx);
  CVector<Scalar> spec = forward<Scalar>(values);
  const std::complex<Scalar> i(0, 1);
  for (Eigen::Index m = 0; m < n; ++m) spec[m] *= i * k[m];
  return backward<Scalar>(spec) / static_cast<Scalar>(n);
}

}  // namespace spectral
}  // namespace cvbell
