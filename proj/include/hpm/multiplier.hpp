// hpm/multiplier.hpp
//
// Fourier multipliers: fractional derivatives, projected symbols psi o pi_P,
// the smoothing operator with symbol (1 - theta(xi)) / quasi_norm(xi), and a
// finite-difference scan of the Marcinkiewicz condition
//   sup |xi^beta d^beta psi(xi)| <= C,   |beta| <= d.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "hpm/anisotropy.hpp"
#include "hpm/errors.hpp"
#include "hpm/spectral.hpp"

namespace hpm {

/// A symbol defined on P. eval receives a point of P.
struct SymbolOnP {
  std::function<cplx(std::span<const double>)> eval;
  int smoothness_order = 0;
  std::string name;
  bool real_even = false;  // psi real and psi(-xi) = psi(xi)

  cplx operator()(std::span<const double> xi) const { return eval(xi); }
};

/// A symbol on R^d \ {0}, not necessarily constant along fibres.
using RawSymbol = std::function<cplx(std::span<const double>)>;

/// (2 pi i s)^a with i^a := exp(i a pi / 2) and (-i)^a := exp(-i a pi / 2).
inline cplx fractional_factor(double s, double a) {
  if (s == 0.0) return 0.0;
  const double mag = std::pow(2.0 * std::numbers::pi * std::abs(s), a);
  const double phase = (s > 0 ? 0.5 : -0.5) * a * std::numbers::pi;
  return std::polar(mag, phase);
}

/// Symbol of (-d/dx)^a, the formal adjoint of d^a/dx^a.
inline cplx adjoint_fractional_factor(double s, double a) { return std::conj(fractional_factor(s, a)); }

inline SpectralField fractional_derivative(const SpectralField& f, std::size_t axis, double order) {
  if (axis >= f.grid().dim()) throw DomainError("fractional_derivative: axis out of range");
  if (!(order > 0.0)) throw DomainError("fractional_derivative: order must be positive");
  const auto sym = lattice_symbol(f.grid(), [&](std::span<const double> xi) {
    return fractional_factor(xi[axis], order);
  });
  return apply_multiplier(f, sym);
}

/// psi(pi_P(xi)) on the lattice; 0 at xi = 0.
inline std::vector<cplx> projected_symbol_lattice(const SpectralGrid& grid, const SymbolOnP& psi,
                                                  const AnisotropyProfile& profile) {
  if (grid.dim() != profile.dim()) throw DomainError("projected symbol: profile/grid dimension mismatch");
  return lattice_symbol(grid, [&](std::span<const double> xi) -> cplx {
    if (std::all_of(xi.begin(), xi.end(), [](double v) { return v == 0.0; })) return 0.0;
    return psi(project_to_P(xi, profile));
  });
}

inline SpectralField apply_projected_symbol(const SpectralField& f, const SymbolOnP& psi,
                                            const AnisotropyProfile& profile) {
  return apply_multiplier(f, projected_symbol_lattice(f.grid(), psi, profile));
}

/// C-infinity ramp: 0 for s <= 0, 1 for s >= 1.
inline double smooth_ramp(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / s);
  const double b = std::exp(-1.0 / (1.0 - s));
  return a / (a + b);
}

/// Cut-off: 1 for quasi_norm <= R/2, 0 for quasi_norm >= R.
inline double cutoff_theta(double qnorm, double radius) {
  return 1.0 - smooth_ramp(2.0 * qnorm / radius - 1.0);
}

/// (1 - theta(xi)) / quasi_norm(xi), the symbol of the smoothing operator.
inline double smoothing_symbol(std::span<const double> xi, const AnisotropyProfile& profile, double radius) {
  const double q = quasi_norm(xi, profile);
  const double keep = 1.0 - cutoff_theta(q, radius);
  return keep == 0.0 ? 0.0 : keep / q;
}

inline SpectralField smoothing_inverse(const SpectralField& f, const AnisotropyProfile& profile,
                                       double cutoff_radius) {
  if (!(cutoff_radius > 0.0)) throw DomainError("smoothing_inverse: cutoff radius must be positive");
  if (f.grid().dim() != profile.dim()) throw DomainError("smoothing_inverse: dimension mismatch");
  const auto sym = lattice_symbol(f.grid(), [&](std::span<const double> xi) -> cplx {
    return smoothing_symbol(xi, profile, cutoff_radius);
  });
  return apply_multiplier(f, sym);
}

/// Lattice sup of |psi(pi_P xi) (1 - theta) (2 pi i xi_k)^alpha_k / quasi_norm|,
/// the L2 -> L2 norm of d^alpha_k o I o A_psi on this grid.
inline double composed_symbol_sup(const SpectralGrid& grid, const SymbolOnP& psi,
                                  const AnisotropyProfile& profile, double cutoff_radius, std::size_t axis) {
  const auto proj = projected_symbol_lattice(grid, psi, profile);
  const auto smooth = lattice_symbol(grid, [&](std::span<const double> xi) -> cplx {
    return smoothing_symbol(xi, profile, cutoff_radius) * fractional_factor(xi[axis], profile.alpha()[axis]);
  });
  double m = 0.0;
  for (std::size_t s = 0; s < proj.size(); ++s) m = std::max(m, std::abs(proj[s] * smooth[s]));
  return m;
}

// ---------------------------------------------------------------------------
// Marcinkiewicz scan

struct MarcinkiewiczReport {
  double constant_estimate = 0.0;
  /// Keyed by multi-index, e.g. {1,0}.
  std::map<std::vector<int>, double> per_beta_sup;
  /// Per-shell sup over all beta, in scan order (see shell_exponents).
  std::vector<double> per_shell_sup;
  std::vector<int> shell_exponents;
  std::size_t shells = 0;
  std::size_t samples_per_shell = 0;
  double coarse_level_sup = 0.0;
  double fine_level_sup = 0.0;
  bool diverged = false;
};

namespace detail {

inline std::vector<std::vector<int>> multi_indices_up_to(std::size_t d, int order) {
  std::vector<std::vector<int>> out;
  std::vector<int> b(d, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
    if (k == d) {
      out.push_back(b);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      b[k] = v;
      rec(k + 1, left - v);
    }
    b[k] = 0;
  };
  rec(0, order);
  std::sort(out.begin(), out.end());
  return out;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Nested central differences: d^beta f(x) with per-axis step h_k, using the
// stencil sum_i (-1)^i C(b,i) f(x + (b/2 - i) h) / h^b on each axis.
inline cplx mixed_partial(const RawSymbol& f, std::span<const double> x, std::span<const int> beta,
                          std::span<const double> h) {
  const std::size_t d = x.size();
  std::vector<double> pt(x.begin(), x.end());
  std::function<cplx(std::size_t)> rec = [&](std::size_t k) -> cplx {
    if (k == d) return f(pt);
    const int b = beta[k];
    if (b == 0) return rec(k + 1);
    cplx acc = 0.0;
    const double x0 = pt[k];
    for (int i = 0; i <= b; ++i) {
      pt[k] = x0 + (0.5 * b - i) * h[k];
      acc += ((i % 2) ? -1.0 : 1.0) * binomial(b, i) * rec(k + 1);
    }
    pt[k] = x0;
    return acc / std::pow(h[k], b);
  };
  return rec(0);
}

// Scan order of shells: 0, -1, 1, -2, 2, ...
inline std::vector<int> shell_order(std::size_t shells) {
  std::vector<int> j;
  for (int m = 0; j.size() < shells; ++m) {
    if (m == 0) {
      j.push_back(0);
      continue;
    }
    j.push_back(-m);
    if (j.size() < shells) j.push_back(m);
  }
  return j;
}

}  // namespace detail

/// Scans sup |xi^beta d^beta symbol| over dyadic quasi-norm shells
/// [2^j, 2^(j+1)], j = 0, -1, 1, -2, 2, ... (shells entries), for every
/// |beta| <= d. The coarse refinement level is the first ceil(shells/2) shells
/// of that order, the fine level all of them; diverged is set when the fine
/// sup exceeds ten times the coarse one.
inline MarcinkiewiczReport marcinkiewicz_certify_symbol(const RawSymbol& symbol, const AnisotropyProfile& profile,
                                                        std::size_t shells, std::size_t samples_per_shell) {
  if (shells < 3) throw DomainError("marcinkiewicz_certify: need at least 3 shells");
  const std::size_t d = profile.dim();
  const std::size_t radial = 4;
  const std::size_t directions = std::max<std::size_t>(8, samples_per_shell / radial);
  const auto mesh = mesh_P(profile, directions);
  const auto betas = detail::multi_indices_up_to(d, static_cast<int>(d));

  MarcinkiewiczReport rep;
  rep.shells = shells;
  rep.samples_per_shell = mesh.size() * radial;
  rep.shell_exponents = detail::shell_order(shells);
  for (const auto& b : betas) rep.per_beta_sup[b] = 0.0;

  std::vector<double> h(d);
  for (int j : rep.shell_exponents) {
    double shell_sup = 0.0;
    const double scale = std::ldexp(1.0, j);
    for (std::size_t r = 0; r < radial; ++r) {
      // quasi_norm = 2^(j + (r + 1/2)/radial), i.e. fibre parameter t = q^l.
      const double q = std::ldexp(std::pow(2.0, (r + 0.5) / radial), j);
      const double t = std::pow(q, profile.l());
      for (const auto& m : mesh) {
        const auto xi = fibre_point(m.xi, t, profile);
        for (std::size_t k = 0; k < d; ++k) h[k] = 1e-3 * std::max(std::abs(xi[k]), scale);
        for (const auto& b : betas) {
          double mono = 1.0;
          for (std::size_t k = 0; k < d; ++k) mono *= std::pow(xi[k], b[k]);
          double v;
          if (mono == 0.0) {
            v = 0.0;
            bool base = std::all_of(b.begin(), b.end(), [](int x) { return x == 0; });
            if (base) v = std::abs(symbol(xi));
          } else {
            v = std::abs(mono * detail::mixed_partial(symbol, xi, b, h));
          }
          if (!std::isfinite(v)) v = INFINITY;
          auto& slot = rep.per_beta_sup[b];
          slot = std::max(slot, v);
          shell_sup = std::max(shell_sup, v);
        }
      }
    }
    rep.per_shell_sup.push_back(shell_sup);
  }
  const std::size_t coarse = (shells + 1) / 2;
  rep.coarse_level_sup = *std::max_element(rep.per_shell_sup.begin(), rep.per_shell_sup.begin() + static_cast<long>(coarse));
  rep.fine_level_sup = *std::max_element(rep.per_shell_sup.begin(), rep.per_shell_sup.end());
  rep.diverged = !std::isfinite(rep.fine_level_sup) || rep.fine_level_sup > 10.0 * rep.coarse_level_sup;
  for (const auto& [b, v] : rep.per_beta_sup) rep.constant_estimate = std::max(rep.constant_estimate, v);
  return rep;
}

inline MarcinkiewiczReport marcinkiewicz_certify(const SymbolOnP& psi, const AnisotropyProfile& profile,
                                                 std::size_t shells, std::size_t samples_per_shell) {
  RawSymbol composed = [&](std::span<const double> xi) { return psi(project_to_P(xi, profile)); };
  return marcinkiewicz_certify_symbol(composed, profile, shells, samples_per_shell);
}

inline std::string multi_index_key(const std::vector<int>& b) {
  std::string s;
  for (std::size_t i = 0; i < b.size(); ++i) s += (i ? "," : "") + std::to_string(b[i]);
  return s;
}

}  // namespace hpm
