// Test functions, fluxes and grids shared by the kinetic unit and acceptance suites.

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "hpm/kinetic.hpp"

namespace hpm::testing {

/// Quadratic B-spline on [a, a + 3w]: C^1 with second-derivative jumps at the knots.
struct QuadSpline {
  double a, w;
  double value(double x) const {
    const double s = (x - a) / w;
    if (s <= 0 || s >= 3) return 0.0;
    if (s < 1) return 0.5 * s * s;
    if (s < 2) return 0.5 * (-2 * s * s + 6 * s - 3);
    return 0.5 * (3 - s) * (3 - s);
  }
  double deriv(double x) const {
    const double s = (x - a) / w;
    if (s <= 0 || s >= 3) return 0.0;
    if (s < 1) return s / w;
    if (s < 2) return (-2 * s + 3) / w;
    return -(3 - s) / w;
  }
};

inline EntropyTestFunction spline_product(QuadSpline p, QuadSpline q) {
  EntropyTestFunction t;
  t.value = [p, q](std::span<const double> x) { return p.value(x[0]) * q.value(x[1]); };
  t.gradient = [p, q](std::span<const double> x) {
    return std::vector<double>{p.deriv(x[0]) * q.value(x[1]), p.value(x[0]) * q.deriv(x[1])};
  };
  return t;
}

/// (1 - r^2)^8 on the disc of radius r0 about c, with analytic derivatives.
inline EntropyTestFunction smooth_bump(std::vector<double> c, double r0, double scale = 1.0) {
  EntropyTestFunction t;
  auto r2 = [c, r0](std::span<const double> x) {
    double s = 0;
    for (std::size_t k = 0; k < c.size(); ++k) s += (x[k] - c[k]) * (x[k] - c[k]);
    return s / (r0 * r0);
  };
  t.value = [=](std::span<const double> x) {
    const double s = r2(x);
    return s >= 1 ? 0.0 : scale * std::pow(1 - s, 8);
  };
  t.gradient = [=](std::span<const double> x) {
    const double s = r2(x);
    std::vector<double> g(c.size(), 0.0);
    if (s >= 1) return g;
    for (std::size_t k = 0; k < c.size(); ++k) g[k] = scale * -16 * std::pow(1 - s, 7) * (x[k] - c[k]) / (r0 * r0);
    return g;
  };
  t.hessian = [=](std::span<const double> x) {
    const double s = r2(x);
    const std::size_t d = c.size();
    std::vector<double> H(d * d, 0.0);
    if (s >= 1) return H;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        const double yj = (x[j] - c[j]) / (r0 * r0), yk = (x[k] - c[k]) / (r0 * r0);
        H[j * d + k] = scale * (224 * std::pow(1 - s, 6) * yj * yk - (j == k ? 16 * std::pow(1 - s, 7) / (r0 * r0) : 0.0));
      }
    return H;
  };
  return t;
}

inline EntropyTestFunction sum(const EntropyTestFunction& a, const EntropyTestFunction& b) {
  EntropyTestFunction t;
  t.value = [=](std::span<const double> x) { return a.value(x) + b.value(x); };
  auto add = [](std::vector<double> u, const std::vector<double>& v) {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += v[i];
    return u;
  };
  t.gradient = [=](std::span<const double> x) { return add(a.gradient(x), b.gradient(x)); };
  t.hessian = [=](std::span<const double> x) { return add(a.hessian(x), b.hessian(x)); };
  return t;
}

/// Burgers in (t, x): f = (lambda, lambda^2 / 2), no diffusion.
inline FluxPair burgers_tx() {
  FluxPair fp;
  fp.name = "burgers-tx";
  fp.d = 2;
  fp.l_split = 2;
  fp.f = [](std::span<const double>, double l) { return std::vector<double>{l, 0.5 * l * l}; };
  fp.df = [](std::span<const double>, double l) { return std::vector<double>{1.0, l}; };
  fp.B = [](std::span<const double>, double) { return std::vector<double>(4, 0.0); };
  fp.dB = fp.B;
  return validate_flux(fp);
}

inline std::vector<double> sample(const BoxGrid& g, const std::function<double(std::span<const double>)>& u) {
  std::vector<double> out(g.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = u(g.centre(c));
  return out;
}

inline BoxGrid box(double t0, double t1, double x0, double x1, std::size_t n) { return {{t0, x0}, {t1, x1}, {n, n}}; }

}  // namespace hpm::testing
