#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace cvbell::optimize {

struct SimplexResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  int evaluations = 0;
};

// Nelder-Mead minimization with an axis-aligned initial simplex.
inline SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& start,
                                 const Eigen::VectorXd& step, double x_tol = 1e-7, double f_tol = 1e-12,
                                 int max_evaluations = 4000) {
  const Eigen::Index dim = start.size();
  std::vector<Eigen::VectorXd> pts(dim + 1, start);
  std::vector<double> vals(dim + 1);
  for (Eigen::Index i = 0; i < dim; ++i) pts[i + 1][i] += step[i];
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  for (Eigen::Index i = 0; i <= dim; ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(dim + 1);
  bool converged = false;
  while (evals < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Eigen::VectorXd> p2(dim + 1);
    std::vector<double> v2(dim + 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      p2[i] = pts[order[i]];
      v2[i] = vals[order[i]];
    }
    pts.swap(p2);
    vals.swap(v2);

    double spread = 0;
    for (Eigen::Index i = 1; i <= dim; ++i) spread = std::max(spread, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
    if (spread < x_tol && std::abs(vals[dim] - vals[0]) < f_tol) {
      converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) centroid += pts[i];
    centroid /= static_cast<double>(dim);
    const Eigen::VectorXd& worst = pts[dim];

    const Eigen::VectorXd reflected = centroid + (centroid - worst);
    const double fr = eval(reflected);
    if (fr < vals[0]) {
      const Eigen::VectorXd expanded = centroid + 2 * (centroid - worst);
      const double fe = eval(expanded);
      if (fe < fr) {
        pts[dim] = expanded;
        vals[dim] = fe;
      } else {
        pts[dim] = reflected;
        vals[dim] = fr;
      }
      continue;
    }
    if (fr < vals[dim - 1]) {
      pts[dim] = reflected;
      vals[dim] = fr;
      continue;
    }
    const bool outside = fr < vals[dim];
    const Eigen::VectorXd contracted = outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                                               : Eigen::VectorXd(centroid + 0.5 * (worst - centroid));
    const double fc = eval(contracted);
    if (fc < (outside ? fr : vals[dim])) {
      pts[dim] = contracted;
      vals[dim] = fc;
      continue;
    }
    for (Eigen::Index i = 1; i <= dim; ++i) {
      pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
  return {pts[best], vals[best], converged, evals};
}

struct LineResult {
  double x = 0.0;
  double value = 0.0;
};

// Golden-section search for a maximum of a unimodal function on [lo, hi].
inline LineResult golden_maximize(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-4) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc > fd ? LineResult{c, fc} : LineResult{d, fd};
}

// Root of a monotone predicate boundary: largest x in [lo, hi] with ok(x), assuming ok(lo).
inline double bisect_boundary(const std::function<bool(double)>& ok, double lo, double hi, double tol) {
  while (hi - lo > tol) {
    const double mid = (lo + hi) / 2;
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace cvbell::optimize
